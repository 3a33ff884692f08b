/** Channel-mean feature reduction: a C×H×W activation map becomes the
 * length-C vector of its per-channel spatial means.
 *
 * Means are accumulated in float64 and rounded to float32 once, so the
 * result is independent of any framework's reduction order and a constant
 * map yields exactly its constant: the float64 sum of up to 2^29 equal
 * float32 values is exact, and the division recovers the value itself.
 */

import * as tf from "@tensorflow/tfjs";

import { FeatureLayer, FeatureSet, makeLayer, validateFeatureSet } from "./kdef.js";

export interface ReducedRows {
  /** Row-major (nSamples, nChannels) channel means. */
  values: Float32Array;
  nSamples: number;
  nChannels: number;
}

/** Per-channel spatial means of a batch of NHWC maps. */
export function channelMeans(
  pixels: Float32Array,
  nSamples: number,
  height: number,
  width: number,
  nChannels: number,
): ReducedRows {
  const area = height * width;
  const values = new Float32Array(nSamples * nChannels);
  for (let sample = 0; sample < nSamples; sample++) {
    const base = sample * area * nChannels;
    for (let channel = 0; channel < nChannels; channel++) {
      let total = 0; // float64
      for (let cell = 0; cell < area; cell++) {
        total += pixels[base + cell * nChannels + channel]!;
      }
      values[sample * nChannels + channel] = Math.fround(total / area);
    }
  }
  return { values, nSamples, nChannels };
}

/** Reduce one layer's output to channel-mean rows, whatever its rank.
 *
 * Convolutional maps (rank 4, NHWC) are averaged over the spatial axes;
 * already-flat outputs (rank 2, e.g. dense heads) pass through unchanged.
 */
export function reduceLayerOutput(output: tf.Tensor): ReducedRows {
  if (output.rank === 4) {
    const [nSamples, height, width, nChannels] = output.shape as [
      number,
      number,
      number,
      number,
    ];
    return channelMeans(
      output.dataSync() as Float32Array,
      nSamples,
      height,
      width,
      nChannels,
    );
  }
  if (output.rank === 2) {
    const [nSamples, nChannels] = output.shape as [number, number];
    return {
      values: new Float32Array(output.dataSync() as Float32Array),
      nSamples,
      nChannels,
    };
  }
  throw new Error(
    `layer output has rank ${output.rank}; expected a 4-D map or 2-D vector`,
  );
}

/** Assemble per-layer row blocks into a validated feature set. */
export function buildFeatureSet(
  datasetName: string,
  layerIds: string[],
  blocks: ReducedRows[][],
): FeatureSet {
  const layers: FeatureLayer[] = layerIds.map((layerId, index) => {
    const parts = blocks[index]!;
    const nChannels = parts[0]!.nChannels;
    let total = 0;
    for (const part of parts) {
      if (part.nChannels !== nChannels) {
        throw new Error(
          `layer ${layerId}: channel count changed between batches`,
        );
      }
      total += part.nSamples;
    }
    const data = new Float32Array(total * nChannels);
    let off = 0;
    for (const part of parts) {
      data.set(part.values, off);
      off += part.values.length;
    }
    return makeLayer(layerId, total, nChannels, data);
  });
  const fset = { datasetName, layers };
  validateFeatureSet(fset);
  return fset;
}
