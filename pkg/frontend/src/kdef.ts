/** KDEF feature files and their JSON manifest sidecars.
 *
 * Binary layout (little-endian):
 *
 *     magic "KDEF" | version u16 = 1 | layer count u16
 *     per layer: id length u16, id UTF-8 bytes, n_samples u32, n_channels u32,
 *                payload n_samples*n_channels float32 row-major
 *     trailer: FNV-1a 64-bit checksum over all preceding bytes
 *
 * The layout is shared with the density-estimation backend that consumes
 * these files; writers here must stay byte-compatible with its reader.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { checksumHex, fnv1a64 } from "./checksum.js";

export const MAGIC = "KDEF";
export const FORMAT_VERSION = 1;

export const MANIFEST_ROLES = [
  "in_distribution_train",
  "in_distribution_test",
  "perturbed",
  "ood",
] as const;
export type ManifestRole = (typeof MANIFEST_ROLES)[number];

export class FeatureFormatError extends Error {}

export interface FeatureLayer {
  layerId: string;
  nSamples: number;
  nChannels: number;
  /** Row-major (nSamples, nChannels) values. */
  data: Float32Array;
}

export interface FeatureSet {
  datasetName: string;
  layers: FeatureLayer[];
}

export function makeLayer(
  layerId: string,
  nSamples: number,
  nChannels: number,
  data: Float32Array,
): FeatureLayer {
  if (nSamples < 1 || nChannels < 1) {
    throw new FeatureFormatError(
      `layer ${layerId}: needs a non-empty matrix, got ${nSamples}x${nChannels}`,
    );
  }
  if (data.length !== nSamples * nChannels) {
    throw new FeatureFormatError(
      `layer ${layerId}: ${data.length} values for a ${nSamples}x${nChannels} matrix`,
    );
  }
  return { layerId, nSamples, nChannels, data };
}

export function validateFeatureSet(fset: FeatureSet): void {
  if (fset.layers.length === 0) {
    throw new FeatureFormatError("a feature set needs at least one layer");
  }
  const seen = new Set<string>();
  const rows = fset.layers[0]!.nSamples;
  for (const layer of fset.layers) {
    if (seen.has(layer.layerId)) {
      throw new FeatureFormatError(`duplicate layer id ${layer.layerId}`);
    }
    seen.add(layer.layerId);
    if (layer.nSamples !== rows) {
      throw new FeatureFormatError(
        `layer ${layer.layerId} has ${layer.nSamples} rows, expected ${rows}`,
      );
    }
    if (layer.data.length !== layer.nSamples * layer.nChannels) {
      throw new FeatureFormatError(
        `layer ${layer.layerId}: payload length mismatch`,
      );
    }
    for (let i = 0; i < layer.data.length; i++) {
      if (!Number.isFinite(layer.data[i]!)) {
        const row = Math.floor(i / layer.nChannels);
        throw new FeatureFormatError(
          `layer ${layer.layerId} row ${row}: non-finite feature value`,
        );
      }
    }
  }
}

export function featureFileBytes(fset: FeatureSet): Uint8Array {
  validateFeatureSet(fset);
  const encoder = new TextEncoder();
  const parts: Uint8Array[] = [];

  const header = new DataView(new ArrayBuffer(8));
  header.setUint8(0, 0x4b); // K
  header.setUint8(1, 0x44); // D
  header.setUint8(2, 0x45); // E
  header.setUint8(3, 0x46); // F
  header.setUint16(4, FORMAT_VERSION, true);
  header.setUint16(6, fset.layers.length, true);
  parts.push(new Uint8Array(header.buffer));

  for (const layer of fset.layers) {
    const ident = encoder.encode(layer.layerId);
    if (ident.length > 0xffff) {
      throw new FeatureFormatError(`layer id too long: ${layer.layerId}`);
    }
    const head = new DataView(new ArrayBuffer(2 + ident.length + 8));
    head.setUint16(0, ident.length, true);
    new Uint8Array(head.buffer).set(ident, 2);
    head.setUint32(2 + ident.length, layer.nSamples, true);
    head.setUint32(2 + ident.length + 4, layer.nChannels, true);
    parts.push(new Uint8Array(head.buffer));

    const payload = new DataView(new ArrayBuffer(layer.data.length * 4));
    for (let i = 0; i < layer.data.length; i++) {
      payload.setFloat32(i * 4, layer.data[i]!, true);
    }
    parts.push(new Uint8Array(payload.buffer));
  }

  const bodyLength = parts.reduce((total, p) => total + p.length, 0);
  const out = new Uint8Array(bodyLength + 8);
  let off = 0;
  for (const part of parts) {
    out.set(part, off);
    off += part.length;
  }
  const trailer = new DataView(out.buffer, bodyLength, 8);
  trailer.setBigUint64(0, fnv1a64(out.subarray(0, bodyLength)), true);
  return out;
}

export function writeFeatureFile(fset: FeatureSet, path: string): void {
  writeFileSync(path, featureFileBytes(fset));
}

export function parseFeatureBytes(
  data: Uint8Array,
  datasetName: string,
): FeatureSet {
  if (data.length < 16) {
    throw new FeatureFormatError(`file too short (${data.length} bytes)`);
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const magic = String.fromCharCode(data[0]!, data[1]!, data[2]!, data[3]!);
  if (magic !== MAGIC) {
    throw new FeatureFormatError(`bad magic ${magic} at offset 0`);
  }
  const stored = view.getBigUint64(data.length - 8, true);
  const actual = fnv1a64(data.subarray(0, data.length - 8));
  if (stored !== actual) {
    throw new FeatureFormatError(
      `checksum mismatch at offset ${data.length - 8}: ` +
        `stored ${checksumHex(stored)}, computed ${checksumHex(actual)}`,
    );
  }
  const version = view.getUint16(4, true);
  if (version !== FORMAT_VERSION) {
    throw new FeatureFormatError(
      `unsupported format version ${version} at offset 4`,
    );
  }
  const layerCount = view.getUint16(6, true);
  if (layerCount < 1) {
    throw new FeatureFormatError("layer count is zero at offset 6");
  }
  const decoder = new TextDecoder("utf-8", { fatal: true });
  const end = data.length - 8;
  let off = 8;
  const layers: FeatureLayer[] = [];
  for (let index = 0; index < layerCount; index++) {
    if (off + 2 > end) {
      throw new FeatureFormatError(`truncated layer header at offset ${off}`);
    }
    const idLength = view.getUint16(off, true);
    off += 2;
    if (off + idLength + 8 > end) {
      throw new FeatureFormatError(`truncated layer header at offset ${off}`);
    }
    const layerId = decoder.decode(data.subarray(off, off + idLength));
    off += idLength;
    const nSamples = view.getUint32(off, true);
    const nChannels = view.getUint32(off + 4, true);
    off += 8;
    if (nSamples < 1 || nChannels < 1) {
      throw new FeatureFormatError(
        `layer ${layerId}: empty matrix declared at offset ${off - 8}`,
      );
    }
    const byteLength = nSamples * nChannels * 4;
    if (off + byteLength > end) {
      throw new FeatureFormatError(
        `layer ${layerId}: payload overruns file at offset ${off}`,
      );
    }
    const values = new Float32Array(nSamples * nChannels);
    for (let i = 0; i < values.length; i++) {
      values[i] = view.getFloat32(off + i * 4, true);
    }
    off += byteLength;
    layers.push(makeLayer(layerId, nSamples, nChannels, values));
  }
  if (off !== end) {
    throw new FeatureFormatError(
      `${end - off} trailing bytes before checksum`,
    );
  }
  const fset = { datasetName, layers };
  validateFeatureSet(fset);
  return fset;
}

export function readFeatureFile(path: string, datasetName?: string): FeatureSet {
  const data = new Uint8Array(readFileSync(path));
  return parseFeatureBytes(data, datasetName ?? path.replace(/^.*\//, "").replace(/\.[^.]*$/, ""));
}

// --- manifests -------------------------------------------------------------

export interface DatasetManifest {
  datasetName: string;
  role: ManifestRole;
  sourcePath: string;
  nSamples: number;
  layerIds: string[];
  /** Trailing checksum of the feature file. */
  checksum: bigint;
}

/** Escape a JSON-encoded string the way ASCII-only encoders do. */
function asciiJson(value: unknown): string {
  return JSON.stringify(value).replace(
    /[-￿]/g,
    (ch) => "\\u" + ch.charCodeAt(0).toString(16).padStart(4, "0"),
  );
}

/** Compact JSON with sorted keys — byte-compatible with the backend's writer. */
export function manifestJson(manifest: DatasetManifest): string {
  const fields = [
    `"checksum":${asciiJson(checksumHex(manifest.checksum))}`,
    `"dataset_name":${asciiJson(manifest.datasetName)}`,
    `"layer_ids":[${manifest.layerIds.map(asciiJson).join(",")}]`,
    `"n_samples":${manifest.nSamples}`,
    `"role":${asciiJson(manifest.role)}`,
    `"source_path":${asciiJson(manifest.sourcePath)}`,
  ];
  return `{${fields.join(",")}}`;
}

export function manifestPath(featurePath: string): string {
  return `${featurePath}.manifest.json`;
}

/** Write the JSON sidecar for an already-written feature file. */
export function writeManifest(
  fset: FeatureSet,
  featurePath: string,
  role: ManifestRole,
  sourcePath = "",
): DatasetManifest {
  if (!MANIFEST_ROLES.includes(role)) {
    throw new FeatureFormatError(`unknown role ${role}`);
  }
  const data = new Uint8Array(readFileSync(featurePath));
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const manifest: DatasetManifest = {
    datasetName: fset.datasetName,
    role,
    sourcePath,
    nSamples: fset.layers[0]!.nSamples,
    layerIds: fset.layers.map((layer) => layer.layerId),
    checksum: view.getBigUint64(data.length - 8, true),
  };
  writeFileSync(manifestPath(featurePath), manifestJson(manifest), "utf-8");
  return manifest;
}
