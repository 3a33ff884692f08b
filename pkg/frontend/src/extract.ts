/** Extraction pipeline: image directory -> per-layer channel means -> KDEF. */

import { readFileSync, readdirSync } from "node:fs";
import { join } from "node:path";

import * as tf from "@tensorflow/tfjs";
import { PNG } from "pngjs";

import { ReducedRows, buildFeatureSet, reduceLayerOutput } from "./features.js";
import { FeatureSet, ManifestRole, writeFeatureFile, writeManifest } from "./kdef.js";
import { extractionModel, loadModel } from "./model.js";
import { PerturbationSpec, perturbBatch } from "./perturb.js";

export interface ExtractionSpec {
  /** Model identifier (builtin: "toy-cnn"). */
  modelId: string;
  /** Optional JSON weights overriding the seeded defaults. */
  weightsPath?: string;
  /** Directory of .png inputs, read in sorted filename order. */
  imagesDir: string;
  /** Layer hook names, in output order. */
  layers: string[];
  /** Optional [height, width] bilinear resize before inference. */
  resize?: [number, number];
  /** Optional per-channel normalization applied after the [0,1] scaling. */
  normalization?: { mean: number[]; std: number[] };
  batchSize: number;
  datasetName: string;
}

export function validateExtractionSpec(spec: ExtractionSpec): void {
  if (spec.layers.length === 0) {
    throw new Error("at least one layer hook is required");
  }
  if (!Number.isInteger(spec.batchSize) || spec.batchSize < 1) {
    throw new Error(`batch size must be a positive integer, got ${spec.batchSize}`);
  }
  if (spec.normalization) {
    const { mean, std } = spec.normalization;
    if (mean.length !== 3 || std.length !== 3) {
      throw new Error("normalization needs exactly 3 mean and 3 std values");
    }
    if (std.some((s) => s === 0)) {
      throw new Error("normalization std must be non-zero");
    }
  }
}

/** Decode one PNG into a [0,1] RGB pixel array. */
export function decodePng(path: string): {
  pixels: Float32Array;
  height: number;
  width: number;
} {
  let png: PNG;
  try {
    png = PNG.sync.read(readFileSync(path));
  } catch (error) {
    throw new Error(`cannot decode image ${path}: ${String(error)}`);
  }
  const { width, height, data } = png;
  const pixels = new Float32Array(height * width * 3);
  for (let i = 0; i < height * width; i++) {
    pixels[i * 3] = data[i * 4]! / 255;
    pixels[i * 3 + 1] = data[i * 4 + 1]! / 255;
    pixels[i * 3 + 2] = data[i * 4 + 2]! / 255;
  }
  return { pixels, height, width };
}

/** Load every .png in the directory (sorted) as one NHWC [0,1] tensor. */
export function loadImageDir(dir: string): { images: tf.Tensor4D; files: string[] } {
  const files = readdirSync(dir)
    .filter((name) => name.toLowerCase().endsWith(".png"))
    .sort();
  if (files.length === 0) {
    throw new Error(`no .png images in ${dir}`);
  }
  const decoded = files.map((name) => decodePng(join(dir, name)));
  const { height, width } = decoded[0]!;
  for (let i = 1; i < decoded.length; i++) {
    if (decoded[i]!.height !== height || decoded[i]!.width !== width) {
      throw new Error(
        `image ${files[i]} is ${decoded[i]!.width}x${decoded[i]!.height}, ` +
          `expected ${width}x${height}`,
      );
    }
  }
  const all = new Float32Array(decoded.length * height * width * 3);
  decoded.forEach((img, index) => all.set(img.pixels, index * img.pixels.length));
  return {
    images: tf.tensor4d(all, [decoded.length, height, width, 3]),
    files,
  };
}

/** Differentiable preprocessing: optional resize, then normalization. */
export function preprocess(spec: ExtractionSpec, images: tf.Tensor4D): tf.Tensor4D {
  return tf.tidy(() => {
    let x = images;
    if (spec.resize) {
      x = tf.image.resizeBilinear(x, spec.resize);
    }
    if (spec.normalization) {
      const mean = tf.tensor1d(spec.normalization.mean);
      const std = tf.tensor1d(spec.normalization.std);
      x = x.sub(mean).div(std) as tf.Tensor4D;
    }
    return x.clone();
  });
}

function extractFromImages(
  spec: ExtractionSpec,
  images: tf.Tensor4D,
): FeatureSet {
  const base = loadModel(spec.modelId, spec.weightsPath);
  const extractor = extractionModel(base, spec.layers);
  const total = images.shape[0];
  const blocks: ReducedRows[][] = spec.layers.map(() => []);
  for (let start = 0; start < total; start += spec.batchSize) {
    const size = Math.min(spec.batchSize, total - start);
    tf.tidy(() => {
      const batch = images.slice([start, 0, 0, 0], [size, -1, -1, -1]);
      const prepped = preprocess(spec, batch);
      const outputs = extractor.predict(prepped);
      const list = Array.isArray(outputs) ? outputs : [outputs];
      list.forEach((output, index) => {
        blocks[index]!.push(reduceLayerOutput(output));
      });
    });
  }
  return buildFeatureSet(spec.datasetName, spec.layers, blocks);
}

/** Channel-mean features for every image in the configured directory. */
export function extractFeatures(spec: ExtractionSpec): FeatureSet {
  validateExtractionSpec(spec);
  const { images } = loadImageDir(spec.imagesDir);
  try {
    return extractFromImages(spec, images);
  } finally {
    images.dispose();
  }
}

/** Perturb the images first, then extract; epsilon = 0 reproduces
 * ``extractFeatures`` exactly.
 */
export function perturbAndExtract(
  spec: ExtractionSpec,
  pert: PerturbationSpec,
): FeatureSet {
  validateExtractionSpec(spec);
  const { images } = loadImageDir(spec.imagesDir);
  const base = loadModel(spec.modelId, spec.weightsPath);
  // the loss sees exactly what the network sees: preprocessing included
  const forward = (x: tf.Tensor4D) => base.predict(preprocess(spec, x)) as tf.Tensor;
  const perturbed = perturbBatch(forward, images, pert);
  try {
    return extractFromImages(spec, perturbed);
  } finally {
    images.dispose();
    perturbed.dispose();
  }
}

/** Write a feature set plus its manifest sidecar; returns the file path. */
export function writeFeatureOutputs(
  fset: FeatureSet,
  outPath: string,
  role: ManifestRole,
  sourcePath = "",
): string {
  writeFeatureFile(fset, outPath);
  writeManifest(fset, outPath, role, sourcePath);
  return outPath;
}
