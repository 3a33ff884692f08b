export { checksumHex, fnv1a64 } from "./checksum.js";
export { SplitMix64 } from "./rand.js";
export {
  DatasetManifest,
  FeatureFormatError,
  FeatureLayer,
  FeatureSet,
  FORMAT_VERSION,
  MAGIC,
  MANIFEST_ROLES,
  ManifestRole,
  featureFileBytes,
  makeLayer,
  manifestJson,
  manifestPath,
  parseFeatureBytes,
  readFeatureFile,
  validateFeatureSet,
  writeFeatureFile,
  writeManifest,
} from "./kdef.js";
export {
  ReducedRows,
  buildFeatureSet,
  channelMeans,
  reduceLayerOutput,
} from "./features.js";
export {
  TOY_INPUT_SIZE,
  TOY_MODEL_ID,
  TOY_WEIGHT_SEED,
  buildToyModel,
  extractionModel,
  loadModel,
  loadWeightsJson,
  saveWeightsJson,
  seedWeights,
} from "./model.js";
export {
  LossTarget,
  PerturbMethod,
  PerturbationSpec,
  perturbBatch,
  perturbationLoss,
  validatePerturbationSpec,
} from "./perturb.js";
export {
  ExtractionSpec,
  decodePng,
  extractFeatures,
  loadImageDir,
  perturbAndExtract,
  preprocess,
  validateExtractionSpec,
  writeFeatureOutputs,
} from "./extract.js";
