#!/usr/bin/env node
/** Command-line entry points: extract features, or perturb-then-extract. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import {
  ExtractionSpec,
  extractFeatures,
  perturbAndExtract,
  writeFeatureOutputs,
} from "./extract.js";
import { MANIFEST_ROLES, ManifestRole } from "./kdef.js";
import { LossTarget, PerturbationSpec } from "./perturb.js";

interface CommonArgs {
  model: string;
  weights?: string;
  images: string;
  layers: string[];
  out: string;
  "dataset-name"?: string;
  role: string;
  "batch-size": number;
  resize?: string;
  "norm-mean"?: string;
  "norm-std"?: string;
}

function parseFloats(text: string, flag: string, count: number): number[] {
  const values = text.split(",").map((part) => Number(part.trim()));
  if (values.length !== count || values.some((v) => !Number.isFinite(v))) {
    throw new Error(`--${flag} needs ${count} comma-separated numbers`);
  }
  return values;
}

function specFromArgs(argv: CommonArgs): ExtractionSpec {
  const spec: ExtractionSpec = {
    modelId: argv.model,
    weightsPath: argv.weights,
    imagesDir: argv.images,
    layers: argv.layers
      .flatMap((part) => part.split(","))
      .map((name) => name.trim())
      .filter(Boolean),
    batchSize: argv["batch-size"],
    datasetName:
      argv["dataset-name"] ??
      argv.out.replace(/^.*\//, "").replace(/\.[^.]*$/, ""),
  };
  if (argv.resize) {
    const dims = argv.resize.toLowerCase().split("x").map(Number);
    if (dims.length !== 2 || dims.some((d) => !Number.isInteger(d) || d < 1)) {
      throw new Error("--resize expects HEIGHTxWIDTH, e.g. 32x32");
    }
    spec.resize = [dims[0]!, dims[1]!];
  }
  if (argv["norm-mean"] || argv["norm-std"]) {
    spec.normalization = {
      mean: argv["norm-mean"] ? parseFloats(argv["norm-mean"], "norm-mean", 3) : [0, 0, 0],
      std: argv["norm-std"] ? parseFloats(argv["norm-std"], "norm-std", 3) : [1, 1, 1],
    };
  }
  return spec;
}

function roleFromArgs(argv: CommonArgs): ManifestRole {
  if (!(MANIFEST_ROLES as readonly string[]).includes(argv.role)) {
    throw new Error(`--role must be one of ${MANIFEST_ROLES.join(", ")}`);
  }
  return argv.role as ManifestRole;
}

const commonOptions = {
  model: { type: "string", default: "toy-cnn", describe: "model identifier (builtin: toy-cnn)" },
  weights: { type: "string", describe: "JSON weights file" },
  images: { type: "string", demandOption: true, describe: "directory of .png inputs" },
  layers: {
    type: "string",
    array: true,
    demandOption: true,
    describe: "layer hook names (space- or comma-separated)",
  },
  out: { type: "string", demandOption: true, describe: "output feature file path" },
  "dataset-name": { type: "string", describe: "dataset name recorded in the manifest (default: file stem)" },
  role: { type: "string", default: "in_distribution_train", describe: `manifest role: ${MANIFEST_ROLES.join("|")}` },
  "batch-size": { type: "number", default: 16 },
  resize: { type: "string", describe: "bilinear resize, HEIGHTxWIDTH" },
  "norm-mean": { type: "string", describe: "3 per-channel means, comma-separated" },
  "norm-std": { type: "string", describe: "3 per-channel stds, comma-separated" },
} as const;

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName("kdef-extract")
      .command(
        "extract",
        "extract channel-mean features into a KDEF file",
        (cmd) => cmd.options(commonOptions),
        (args) => {
          const spec = specFromArgs(args as unknown as CommonArgs);
          const role = roleFromArgs(args as unknown as CommonArgs);
          const fset = extractFeatures(spec);
          const path = writeFeatureOutputs(fset, (args as any).out, role, spec.imagesDir);
          console.log(
            `wrote ${fset.layers[0]!.nSamples} rows x ${fset.layers.length} layers to ${path}`,
          );
        },
      )
      .command(
        "perturb",
        "perturb inputs, then extract features into a KDEF file",
        (cmd) =>
          cmd.options({
            ...commonOptions,
            role: { ...commonOptions.role, default: "perturbed" },
            method: {
              type: "string",
              choices: ["gradient-sign", "gaussian"] as const,
              default: "gradient-sign",
            },
            epsilon: { type: "number", demandOption: true, describe: "step size (0 = no-op)" },
            seed: { type: "number", default: 0, describe: "noise seed (gaussian only)" },
            "loss-target": {
              type: "string",
              choices: ["predicted_class", "output_sum"] as const,
              default: "predicted_class",
            },
          }),
        (args) => {
          const spec = specFromArgs(args as unknown as CommonArgs);
          const role = roleFromArgs(args as unknown as CommonArgs);
          const pert: PerturbationSpec = {
            method: (args as any).method === "gaussian" ? "gaussian_noise" : "gradient_sign",
            epsilon: (args as any).epsilon,
            seed: (args as any).seed,
            lossTarget: (args as any)["loss-target"] as LossTarget,
          };
          const fset = perturbAndExtract(spec, pert);
          const path = writeFeatureOutputs(fset, (args as any).out, role, spec.imagesDir);
          console.log(
            `wrote ${fset.layers[0]!.nSamples} perturbed rows x ${fset.layers.length} layers to ${path}`,
          );
        },
      )
      .demandCommand(1, "specify a command: extract or perturb")
      .strict()
      .fail((msg, error) => {
        throw error ?? new Error(msg);
      })
      .parseAsync();
    return 0;
  } catch (error) {
    console.error(`error: ${error instanceof Error ? error.message : String(error)}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].replace(/^.*\//, ""));
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
