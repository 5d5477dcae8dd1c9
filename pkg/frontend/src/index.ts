export {
  BridgeError,
  COMPONENT_NAMES,
  loadRankPattern,
  parseRankPattern,
  rankAt,
} from './manifest.js';
export type { BridgeManifest, ComponentName, Override } from './manifest.js';
export {
  countAdapterParams,
  emitAdapterConfig,
  readAdapterConfig,
  writeAdapterConfig,
} from './emit.js';
export type { AdapterConfig, ModelDims } from './emit.js';
export { LLAMA_TEMPLATE, templateByName } from './templates.js';
export type { ModuleTemplate } from './templates.js';
