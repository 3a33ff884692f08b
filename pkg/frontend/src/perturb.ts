/** Input perturbations: gradient-sign and seeded gaussian noise.
 *
 * Perturbation happens in pixel space (the [clampMin, clampMax] range), so
 * perturbed inputs remain valid images; any preprocessing is part of the
 * differentiated loss. epsilon = 0 is an exact no-op by construction — the
 * input tensor is returned untouched.
 */

import * as tf from "@tensorflow/tfjs";

import { SplitMix64 } from "./rand.js";

export type PerturbMethod = "gradient_sign" | "gaussian_noise";
export type LossTarget = "predicted_class" | "output_sum";

export interface PerturbationSpec {
  method: PerturbMethod;
  /** Step size; 0 disables the perturbation exactly. */
  epsilon: number;
  /** Stream seed for gaussian_noise (ignored by gradient_sign). */
  seed?: number;
  /** Objective differentiated by gradient_sign (default predicted_class). */
  lossTarget?: LossTarget;
  clampMin?: number;
  clampMax?: number;
}

export function validatePerturbationSpec(spec: PerturbationSpec): void {
  if (!Number.isFinite(spec.epsilon) || spec.epsilon < 0) {
    throw new Error(`epsilon must be a finite value >= 0, got ${spec.epsilon}`);
  }
  if (spec.method !== "gradient_sign" && spec.method !== "gaussian_noise") {
    throw new Error(`unknown perturbation method ${String(spec.method)}`);
  }
}

/** Scalar loss whose input-gradient drives the gradient-sign step. */
export function perturbationLoss(
  forward: (x: tf.Tensor4D) => tf.Tensor,
  images: tf.Tensor4D,
  target: LossTarget,
): (x: tf.Tensor4D) => tf.Scalar {
  if (target === "output_sum") {
    return (x) => forward(x).sum();
  }
  // cross-entropy against the model's own prediction on the clean input
  const labels = tf.tidy(() => {
    const logits = forward(images) as tf.Tensor2D;
    return tf.oneHot(logits.argMax(1), logits.shape[1]!);
  });
  return (x) =>
    tf.losses.softmaxCrossEntropy(labels, forward(x) as tf.Tensor2D).asScalar();
}

/** Perturbed copy of ``images``; the caller owns the returned tensor. */
export function perturbBatch(
  forward: (x: tf.Tensor4D) => tf.Tensor,
  images: tf.Tensor4D,
  spec: PerturbationSpec,
): tf.Tensor4D {
  validatePerturbationSpec(spec);
  if (spec.epsilon === 0) {
    return images.clone();
  }
  const clampMin = spec.clampMin ?? 0;
  const clampMax = spec.clampMax ?? 1;
  if (spec.method === "gaussian_noise") {
    return tf.tidy(() => {
      const rng = new SplitMix64(spec.seed ?? 0);
      const noise = tf.tensor4d(
        rng.gaussianArray(images.size),
        images.shape as [number, number, number, number],
      );
      return images
        .add(noise.mul(spec.epsilon))
        .clipByValue(clampMin, clampMax) as tf.Tensor4D;
    });
  }
  return tf.tidy(() => {
    const loss = perturbationLoss(forward, images, spec.lossTarget ?? "predicted_class");
    const gradient = tf.grad((x) => loss(x as tf.Tensor4D))(images);
    return images
      .add(gradient.sign().mul(spec.epsilon))
      .clipByValue(clampMin, clampMax) as tf.Tensor4D;
  });
}
