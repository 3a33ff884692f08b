/** Toy convolutional model with named feature layers.
 *
 * A small deterministic CNN stands in for a pretrained network: weights are
 * drawn from a fixed seeded stream (or loaded from a JSON file), so feature
 * extraction is reproducible end to end.
 */

import { readFileSync, writeFileSync } from "node:fs";

import * as tf from "@tensorflow/tfjs";

import { SplitMix64 } from "./rand.js";

export const TOY_MODEL_ID = "toy-cnn";
export const TOY_INPUT_SIZE = 32;
export const TOY_WEIGHT_SEED = 7n;

export function buildToyModel(): tf.LayersModel {
  const input = tf.input({ shape: [TOY_INPUT_SIZE, TOY_INPUT_SIZE, 3] });
  let x = tf.layers
    .conv2d({ filters: 8, kernelSize: 3, padding: "same", activation: "relu", name: "block1" })
    .apply(input) as tf.SymbolicTensor;
  x = tf.layers.maxPooling2d({ poolSize: 2, name: "pool1" }).apply(x) as tf.SymbolicTensor;
  x = tf.layers
    .conv2d({ filters: 12, kernelSize: 3, padding: "same", activation: "relu", name: "block2" })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.maxPooling2d({ poolSize: 2, name: "pool2" }).apply(x) as tf.SymbolicTensor;
  x = tf.layers
    .conv2d({ filters: 16, kernelSize: 3, padding: "same", activation: "relu", name: "block3" })
    .apply(x) as tf.SymbolicTensor;
  x = tf.layers.globalAveragePooling2d({ name: "gap" }).apply(x) as tf.SymbolicTensor;
  const logits = tf.layers.dense({ units: 4, name: "logits" }).apply(x) as tf.SymbolicTensor;
  const model = tf.model({ inputs: input, outputs: logits, name: TOY_MODEL_ID });
  seedWeights(model, TOY_WEIGHT_SEED);
  return model;
}

/** Overwrite every weight with values from one seeded stream. */
export function seedWeights(model: tf.LayersModel, seed: bigint): void {
  const rng = new SplitMix64(seed);
  const replacements = model.getWeights().map((weight) => {
    const values = rng.uniformArray(weight.size, -0.25, 0.25);
    return tf.tensor(values, weight.shape);
  });
  model.setWeights(replacements);
  replacements.forEach((t) => t.dispose());
}

/** Multi-output model exposing the named layers' activations. */
export function extractionModel(
  model: tf.LayersModel,
  layerNames: string[],
): tf.LayersModel {
  if (layerNames.length === 0) {
    throw new Error("at least one layer name is required");
  }
  const outputs = layerNames.map((name) => {
    try {
      return model.getLayer(name).output as tf.SymbolicTensor;
    } catch {
      throw new Error(
        `layer ${name} does not resolve; model has ` +
          model.layers.map((layer) => layer.name).join(", "),
      );
    }
  });
  return tf.model({ inputs: model.inputs, outputs });
}

interface StoredWeight {
  shape: number[];
  values: number[];
}

export function saveWeightsJson(model: tf.LayersModel, path: string): void {
  const stored: StoredWeight[] = model.getWeights().map((weight) => ({
    shape: weight.shape.slice(),
    values: Array.from(weight.dataSync()),
  }));
  writeFileSync(path, JSON.stringify(stored), "utf-8");
}

export function loadWeightsJson(model: tf.LayersModel, path: string): void {
  const stored = JSON.parse(readFileSync(path, "utf-8")) as StoredWeight[];
  const current = model.getWeights();
  if (stored.length !== current.length) {
    throw new Error(
      `weights file has ${stored.length} tensors, model needs ${current.length}`,
    );
  }
  const replacements = stored.map((entry, index) => {
    const expected = current[index]!.shape;
    if (
      entry.shape.length !== expected.length ||
      entry.shape.some((dim, axis) => dim !== expected[axis])
    ) {
      throw new Error(
        `weight ${index} has shape [${entry.shape}], expected [${expected}]`,
      );
    }
    return tf.tensor(new Float32Array(entry.values), entry.shape);
  });
  model.setWeights(replacements);
  replacements.forEach((t) => t.dispose());
}

/** Resolve a model id (only the builtin toy model is known). */
export function loadModel(modelId: string, weightsPath?: string): tf.LayersModel {
  if (modelId !== TOY_MODEL_ID) {
    throw new Error(`unknown model id ${modelId}; available: ${TOY_MODEL_ID}`);
  }
  const model = buildToyModel();
  if (weightsPath) {
    loadWeightsJson(model, weightsPath);
  }
  return model;
}
