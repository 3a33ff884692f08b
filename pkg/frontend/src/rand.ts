/** Deterministic random streams (splitmix64) for noise and toy weights.
 *
 * Pinned here rather than delegated to a framework RNG so that seeded runs
 * produce identical bytes regardless of library versions or backends.
 */

const GAMMA = 0x9e3779b97f4a7c15n;
const MASK64 = 0xffffffffffffffffn;

function mix64(z: bigint): bigint {
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return z ^ (z >> 31n);
}

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    return mix64(this.state);
  }

  /** Uniform double in [0, 1) with 53 random bits. */
  nextFloat(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }

  /** Standard normal via Box-Muller; one draw per call. */
  nextGaussian(): number {
    // u must be > 0 for the log; nextFloat() can return exactly 0
    const u = 1 - this.nextFloat();
    const v = this.nextFloat();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }

  gaussianArray(length: number): Float32Array {
    const out = new Float32Array(length);
    for (let i = 0; i < length; i++) {
      out[i] = this.nextGaussian();
    }
    return out;
  }

  uniformArray(length: number, low: number, high: number): Float32Array {
    const out = new Float32Array(length);
    for (let i = 0; i < length; i++) {
      out[i] = low + (high - low) * this.nextFloat();
    }
    return out;
  }
}
