/**
 * Adapter-config emission and the independent parameter recount.
 *
 * The emitted file follows the per-module rank-override convention of
 * mainstream adapter libraries: a base rank `r` plus a `rank_pattern` map
 * from concrete module paths to ranks. A metadata block records the source
 * pattern hash. The bridge is a format transducer plus validator; it never
 * changes a rank value.
 */

import fs from 'fs';

import {
  BridgeError,
  BridgeManifest,
  COMPONENT_NAMES,
  ComponentName,
  Override,
} from './manifest.js';
import { ModuleTemplate, templateByName } from './templates.js';

export interface AdapterConfig {
  peft_type: 'LORA';
  r: number;
  lora_alpha: number;
  target_modules: string[];
  rank_pattern: Record<string, number>;
  metadata: {
    source_schedule_hash: string;
    template: string;
    generator: string;
  };
}

export interface EmitOptions {
  /** When given, overrides referencing layers at or past this count fail. */
  numLayers?: number;
}

export function emitAdapterConfig(
  manifest: BridgeManifest,
  template: ModuleTemplate,
  options: EmitOptions = {},
): AdapterConfig {
  if (options.numLayers !== undefined && manifest.maxLayerIndex >= options.numLayers) {
    throw new BridgeError(
      'template-mismatch',
      `manifest references layer ${manifest.maxLayerIndex} but the target ` +
        `model has only ${options.numLayers} layers`,
    );
  }
  const rankPattern: Record<string, number> = {};
  for (const o of manifest.overrides) {
    rankPattern[template.modulePath(o.layer, o.component)] = o.rank;
  }
  return {
    peft_type: 'LORA',
    r: manifest.defaultRank,
    lora_alpha: manifest.defaultRank,
    target_modules: [...COMPONENT_NAMES],
    rank_pattern: rankPattern,
    metadata: {
      source_schedule_hash: manifest.sourceHash,
      template: template.name,
      generator: 'hydra-bridge',
    },
  };
}

export function writeAdapterConfig(config: AdapterConfig, path: string): void {
  fs.writeFileSync(path, JSON.stringify(config, null, 2) + '\n', 'utf8');
}

/**
 * Parse an emitted adapter config back into a manifest (modulo the source
 * hash, which names the original pattern file, not this config).
 */
export function readAdapterConfig(text: string): BridgeManifest {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new BridgeError('parse-error', `invalid JSON: ${(err as Error).message}`);
  }
  const doc = raw as Record<string, unknown>;
  if (doc.peft_type !== 'LORA' || typeof doc.r !== 'number') {
    throw new BridgeError('parse-error', 'not an adapter config emitted by this bridge');
  }
  const meta = doc.metadata as Record<string, unknown> | undefined;
  const template = templateByName(String(meta?.template ?? 'llama'));
  const modulePathOf = new Map<string, { layer: number; component: ComponentName }>();
  const maxLayerGuess = 4096;
  const pattern = (doc.rank_pattern ?? {}) as Record<string, number>;
  // Invert the template lazily: only layers that actually appear matter.
  const layersSeen = new Set<number>();
  for (const path of Object.keys(pattern)) {
    const match = /\.layers\.(\d+)\./.exec(path);
    if (!match || Number(match[1]) >= maxLayerGuess) {
      throw new BridgeError('template-mismatch', `module path ${path} does not fit the template`);
    }
    layersSeen.add(Number(match[1]));
  }
  for (const layer of layersSeen) {
    for (const component of COMPONENT_NAMES) {
      modulePathOf.set(template.modulePath(layer, component), { layer, component });
    }
  }
  const overrides: Override[] = [];
  let maxLayerIndex = -1;
  for (const [path, rank] of Object.entries(pattern)) {
    const slot = modulePathOf.get(path);
    if (!slot) {
      throw new BridgeError('template-mismatch', `module path ${path} does not fit the template`);
    }
    if (!Number.isInteger(rank) || rank <= 0) {
      throw new BridgeError('non-positive-rank', `rank for ${path} must be a positive integer`);
    }
    overrides.push({ layer: slot.layer, component: slot.component, rank });
    maxLayerIndex = Math.max(maxLayerIndex, slot.layer);
  }
  return {
    sourceHash: String(meta?.source_schedule_hash ?? ''),
    defaultRank: doc.r,
    overrides,
    maxLayerIndex,
  };
}

export interface ModelDims {
  numLayers: number;
  hiddenDim: number;
  intermediateDim: number;
}

const DIMS: Record<ComponentName, (d: ModelDims) => [number, number]> = {
  q_proj: (m) => [m.hiddenDim, m.hiddenDim],
  k_proj: (m) => [m.hiddenDim, m.hiddenDim],
  v_proj: (m) => [m.hiddenDim, m.hiddenDim],
  o_proj: (m) => [m.hiddenDim, m.hiddenDim],
  up_proj: (m) => [m.hiddenDim, m.intermediateDim],
  down_proj: (m) => [m.intermediateDim, m.hiddenDim],
  gate_proj: (m) => [m.hiddenDim, m.intermediateDim],
};

/**
 * Independent trainable-parameter recount: rank * (fan_in + fan_out) summed
 * over every (layer, component) slot, overrides applied over the default.
 */
export function countAdapterParams(manifest: BridgeManifest, dims: ModelDims): number {
  if (manifest.maxLayerIndex >= dims.numLayers) {
    throw new BridgeError(
      'template-mismatch',
      `manifest references layer ${manifest.maxLayerIndex} but the model has ` +
        `${dims.numLayers} layers`,
    );
  }
  const rankOf = new Map<string, number>();
  for (const o of manifest.overrides) {
    rankOf.set(`${o.layer}.${o.component}`, o.rank);
  }
  let total = 0;
  for (let layer = 0; layer < dims.numLayers; layer += 1) {
    for (const component of COMPONENT_NAMES) {
      const rank = rankOf.get(`${layer}.${component}`) ?? manifest.defaultRank;
      const [fanIn, fanOut] = DIMS[component](dims);
      total += rank * (fanIn + fanOut);
    }
  }
  return total;
}
