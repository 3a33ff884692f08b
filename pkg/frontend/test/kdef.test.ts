import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { fnv1a64 } from "../src/checksum.js";
import {
  FeatureFormatError,
  FeatureSet,
  featureFileBytes,
  makeLayer,
  manifestJson,
  manifestPath,
  parseFeatureBytes,
  readFeatureFile,
  validateFeatureSet,
  writeFeatureFile,
  writeManifest,
} from "../src/kdef.js";

function singleValueSet(value: number): FeatureSet {
  return {
    datasetName: "tiny",
    layers: [makeLayer("conv", 1, 1, new Float32Array([value]))],
  };
}

function multiLayerSet(): FeatureSet {
  return {
    datasetName: "multi",
    layers: [
      makeLayer("early", 3, 2, new Float32Array([1, 2, 3, 4, 5, 6])),
      makeLayer("late", 3, 4, new Float32Array(12).map((_, i) => i * 0.25)),
    ],
  };
}

describe("featureFileBytes", () => {
  it("lays out a 1x1 single-layer file byte for byte", () => {
    const bytes = featureFileBytes(singleValueSet(0.15625));
    // magic + (version u16, count u16) + (id len u16 + "conv") + (rows u32,
    // cols u32) + one f32 + trailing u64 checksum
    expect(bytes.length).toBe(4 + 4 + (2 + 4) + 8 + 4 + 8);
    expect([...bytes.subarray(0, 4)]).toEqual(
      [..."KDEF"].map((c) => c.charCodeAt(0)),
    );
    const view = new DataView(bytes.buffer);
    expect(view.getUint16(4, true)).toBe(1); // format version
    expect(view.getUint16(6, true)).toBe(1); // layer count
    expect(view.getUint16(8, true)).toBe(4); // id length
    expect(new TextDecoder().decode(bytes.subarray(10, 14))).toBe("conv");
    expect(view.getUint32(14, true)).toBe(1);
    expect(view.getUint32(18, true)).toBe(1);
    expect(view.getFloat32(22, true)).toBe(0.15625); // exactly representable
    const body = bytes.subarray(0, bytes.length - 8);
    expect(view.getBigUint64(bytes.length - 8, true)).toBe(fnv1a64(body));
  });

  it("round-trips through the parser bit-exactly", () => {
    const fset = multiLayerSet();
    const bytes = featureFileBytes(fset);
    const parsed = parseFeatureBytes(bytes, "multi");
    expect(parsed.layers.map((l) => l.layerId)).toEqual(["early", "late"]);
    expect(parsed.layers[0]!.data).toEqual(fset.layers[0]!.data);
    expect(parsed.layers[1]!.data).toEqual(fset.layers[1]!.data);
    expect(featureFileBytes(parsed)).toEqual(bytes);
  });

  it("writes and reads through the filesystem", () => {
    const dir = mkdtempSync(join(tmpdir(), "kdef-"));
    const path = join(dir, "tiny.kdef");
    writeFeatureFile(singleValueSet(2.5), path);
    const back = readFeatureFile(path);
    expect(back.datasetName).toBe("tiny"); // file stem
    expect(back.layers[0]!.data[0]).toBe(2.5);
  });
});

describe("parseFeatureBytes validation", () => {
  const good = () => featureFileBytes(multiLayerSet());

  it("rejects a bad magic", () => {
    const bytes = good();
    bytes[0] = 0x58;
    expect(() => parseFeatureBytes(bytes, "x")).toThrow(/bad magic/);
  });

  it("rejects a corrupted payload via the checksum", () => {
    const bytes = good();
    bytes[20] ^= 0xff;
    expect(() => parseFeatureBytes(bytes, "x")).toThrow(/checksum mismatch/);
  });

  it("rejects truncation", () => {
    const bytes = good().subarray(0, 10);
    expect(() => parseFeatureBytes(bytes, "x")).toThrow(FeatureFormatError);
  });

  it("rejects files shorter than any valid layout", () => {
    expect(() => parseFeatureBytes(new Uint8Array(8), "x")).toThrow(
      /too short/,
    );
  });

  it("rejects trailing bytes between the layers and the checksum", () => {
    const full = good();
    const body = full.subarray(0, full.length - 8);
    const padded = new Uint8Array(body.length + 3 + 8);
    padded.set(body, 0);
    // junk bytes get a matching checksum so the structural check is what fires
    new DataView(padded.buffer).setBigUint64(
      padded.length - 8,
      fnv1a64(padded.subarray(0, padded.length - 8)),
      true,
    );
    expect(() => parseFeatureBytes(padded, "x")).toThrow(/trailing bytes/);
  });

  it("rejects a zero layer count", () => {
    const bytes = new Uint8Array(16);
    bytes.set([0x4b, 0x44, 0x45, 0x46], 0);
    const view = new DataView(bytes.buffer);
    view.setUint16(4, 1, true);
    view.setUint16(6, 0, true);
    view.setBigUint64(8, fnv1a64(bytes.subarray(0, 8)), true);
    expect(() => parseFeatureBytes(bytes, "x")).toThrow(/layer count is zero/);
  });

  it("rejects unsupported format versions", () => {
    const bytes = good();
    new DataView(bytes.buffer).setUint16(4, 9, true);
    const body = bytes.subarray(0, bytes.length - 8);
    new DataView(bytes.buffer).setBigUint64(
      bytes.length - 8,
      fnv1a64(body),
      true,
    );
    expect(() => parseFeatureBytes(bytes, "x")).toThrow(
      /unsupported format version/,
    );
  });
});

describe("validateFeatureSet", () => {
  it("rejects duplicate layer ids", () => {
    const layer = makeLayer("same", 1, 1, new Float32Array([1]));
    expect(() =>
      validateFeatureSet({ datasetName: "d", layers: [layer, layer] }),
    ).toThrow(/duplicate/);
  });

  it("rejects inconsistent row counts", () => {
    expect(() =>
      validateFeatureSet({
        datasetName: "d",
        layers: [
          makeLayer("a", 2, 1, new Float32Array([1, 2])),
          makeLayer("b", 3, 1, new Float32Array([1, 2, 3])),
        ],
      }),
    ).toThrow(/rows/);
  });

  it("rejects non-finite values", () => {
    expect(() =>
      validateFeatureSet({
        datasetName: "d",
        layers: [makeLayer("a", 2, 1, new Float32Array([1, Infinity]))],
      }),
    ).toThrow(/non-finite/);
  });

  it("rejects an empty layer list", () => {
    expect(() => validateFeatureSet({ datasetName: "d", layers: [] })).toThrow(
      /at least one layer/,
    );
  });
});

describe("manifests", () => {
  it("serializes compact JSON with sorted keys", () => {
    const text = manifestJson({
      datasetName: "train",
      role: "in_distribution_train",
      sourcePath: "imgs/",
      nSamples: 3,
      layerIds: ["early", "late"],
      checksum: 0xabcn,
    });
    expect(text).toBe(
      '{"checksum":"0000000000000abc","dataset_name":"train",' +
        '"layer_ids":["early","late"],"n_samples":3,' +
        '"role":"in_distribution_train","source_path":"imgs/"}',
    );
  });

  it("escapes non-ASCII the way ASCII-only encoders do", () => {
    const text = manifestJson({
      datasetName: "träin",
      role: "ood",
      sourcePath: "",
      nSamples: 1,
      layerIds: ["a"],
      checksum: 0n,
    });
    expect(text).toContain('"dataset_name":"tr\\u00e4in"');
  });

  it("records the written file's trailing checksum", () => {
    const dir = mkdtempSync(join(tmpdir(), "kdef-"));
    const path = join(dir, "m.kdef");
    const fset = multiLayerSet();
    writeFeatureFile(fset, path);
    const manifest = writeManifest(fset, path, "ood", "somewhere");
    const bytes = new Uint8Array(readFileSync(path));
    const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
    expect(manifest.checksum).toBe(view.getBigUint64(bytes.length - 8, true));
    const sidecar = JSON.parse(readFileSync(manifestPath(path), "utf-8"));
    expect(sidecar.n_samples).toBe(3);
    expect(sidecar.layer_ids).toEqual(["early", "late"]);
    expect(sidecar.role).toBe("ood");
  });

  it("rejects unknown roles", () => {
    const dir = mkdtempSync(join(tmpdir(), "kdef-"));
    const path = join(dir, "r.kdef");
    writeFeatureFile(singleValueSet(1), path);
    expect(() =>
      writeManifest(singleValueSet(1), path, "training" as never),
    ).toThrow(/unknown role/);
  });
});
