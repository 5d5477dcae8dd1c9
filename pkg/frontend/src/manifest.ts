/**
 * Rank-pattern manifests.
 *
 * The upstream scheduler exports
 * `{"default_rank": r, "pattern": {"layers.<i>.<component>": rank, ...}}`
 * with 0-based layer indices and only the entries that deviate from the
 * default. The bridge validates that shape, never alters rank values, and
 * carries a content hash of the source file for traceability.
 */

import crypto from 'crypto';
import fs from 'fs';

export const COMPONENT_NAMES = [
  'q_proj',
  'k_proj',
  'v_proj',
  'o_proj',
  'up_proj',
  'down_proj',
  'gate_proj',
] as const;

export type ComponentName = (typeof COMPONENT_NAMES)[number];

const PATTERN_KEY = /^layers\.(\d+)\.([a-z_]+)$/;

export class BridgeError extends Error {
  constructor(
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'BridgeError';
  }
}

export interface Override {
  layer: number;
  component: ComponentName;
  rank: number;
}

export interface BridgeManifest {
  /** sha256 of the source pattern file content (first 16 hex chars). */
  sourceHash: string;
  defaultRank: number;
  overrides: Override[];
  /** Highest 0-based layer index mentioned by an override; -1 if none. */
  maxLayerIndex: number;
}

function isPositiveInt(value: unknown): value is number {
  return typeof value === 'number' && Number.isInteger(value) && value > 0;
}

export function parseRankPattern(text: string): BridgeManifest {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new BridgeError('parse-error', `invalid JSON: ${(err as Error).message}`);
  }
  if (typeof raw !== 'object' || raw === null) {
    throw new BridgeError('parse-error', 'rank pattern must be a JSON object');
  }
  const doc = raw as Record<string, unknown>;
  if (!isPositiveInt(doc.default_rank)) {
    throw new BridgeError(
      'non-positive-rank',
      `default_rank must be a positive integer, got ${JSON.stringify(doc.default_rank)}`,
    );
  }
  if (typeof doc.pattern !== 'object' || doc.pattern === null) {
    throw new BridgeError('parse-error', 'pattern must be an object');
  }

  const overrides: Override[] = [];
  let maxLayerIndex = -1;
  for (const [key, value] of Object.entries(doc.pattern as Record<string, unknown>)) {
    const match = PATTERN_KEY.exec(key);
    if (!match) {
      throw new BridgeError('bad-pattern-key', `key ${JSON.stringify(key)} does not match layers.<i>.<component>`);
    }
    const layer = Number(match[1]);
    const component = match[2];
    if (!(COMPONENT_NAMES as readonly string[]).includes(component)) {
      throw new BridgeError('unknown-component', `unknown component ${JSON.stringify(component)} in ${key}`);
    }
    if (!isPositiveInt(value)) {
      throw new BridgeError(
        'non-positive-rank',
        `rank for ${key} must be a positive integer, got ${JSON.stringify(value)}`,
      );
    }
    overrides.push({ layer, component: component as ComponentName, rank: value });
    maxLayerIndex = Math.max(maxLayerIndex, layer);
  }

  return {
    sourceHash: crypto.createHash('sha256').update(text).digest('hex').slice(0, 16),
    defaultRank: doc.default_rank,
    overrides,
    maxLayerIndex,
  };
}

export function loadRankPattern(path: string): BridgeManifest {
  let text: string;
  try {
    text = fs.readFileSync(path, 'utf8');
  } catch (err) {
    throw new BridgeError('unreadable-file', `cannot read ${path}: ${(err as Error).message}`);
  }
  return parseRankPattern(text);
}

/** Rank of one (layer, component) slot under the manifest. */
export function rankAt(manifest: BridgeManifest, layer: number, component: ComponentName): number {
  for (const o of manifest.overrides) {
    if (o.layer === layer && o.component === component) return o.rank;
  }
  return manifest.defaultRank;
}
