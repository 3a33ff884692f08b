/** 64-bit FNV-1a checksum, the integrity trailer of KDEF feature files. */

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = 0xffffffffffffffffn;

export function fnv1a64(data: Uint8Array): bigint {
  let hash = FNV_OFFSET;
  for (let i = 0; i < data.length; i++) {
    hash ^= BigInt(data[i]!);
    hash = (hash * FNV_PRIME) & MASK64;
  }
  return hash;
}

/** Fixed-width lowercase hex, the manifest encoding of the checksum. */
export function checksumHex(value: bigint): string {
  return value.toString(16).padStart(16, "0");
}
