#!/usr/bin/env node
/**
 * hydra-bridge: convert an exported rank-pattern JSON into an adapter config.
 *
 * Usage:
 *   hydra-bridge convert --in pattern.json --out adapter_config.json \
 *     --template llama [--num-layers 24]
 *
 * Exit codes mirror the upstream CLI: 0 success, 2 user/validation error
 * (JSON on stderr), 3 internal error.
 */

import { emitAdapterConfig, writeAdapterConfig } from './emit.js';
import { BridgeError, loadRankPattern } from './manifest.js';
import { templateByName } from './templates.js';

function parseArg(argv: string[], name: string): string | undefined {
  const idx = argv.indexOf(`--${name}`);
  if (idx === -1 || idx + 1 >= argv.length) return undefined;
  return argv[idx + 1];
}

export function main(argv: string[]): number {
  try {
    const [command, ...rest] = argv;
    if (command !== 'convert') {
      throw new BridgeError('usage', `unknown command ${JSON.stringify(command)}; expected 'convert'`);
    }
    const input = parseArg(rest, 'in');
    const output = parseArg(rest, 'out');
    if (!input || !output) {
      throw new BridgeError('usage', 'convert requires --in <pattern.json> and --out <adapter_config.json>');
    }
    const template = templateByName(parseArg(rest, 'template') ?? 'llama');
    const numLayersArg = parseArg(rest, 'num-layers');
    const numLayers = numLayersArg === undefined ? undefined : Number(numLayersArg);
    if (numLayers !== undefined && (!Number.isInteger(numLayers) || numLayers < 1)) {
      throw new BridgeError('usage', `--num-layers must be a positive integer, got ${numLayersArg}`);
    }

    const manifest = loadRankPattern(input);
    const config = emitAdapterConfig(manifest, template, { numLayers });
    writeAdapterConfig(config, output);
    console.log(
      `wrote ${output} (default rank ${config.r}, ` +
        `${Object.keys(config.rank_pattern).length} overrides, source ${manifest.sourceHash})`,
    );
    return 0;
  } catch (err) {
    if (err instanceof BridgeError) {
      process.stderr.write(JSON.stringify({ error: err.code, message: err.message }) + '\n');
      return 2;
    }
    process.stderr.write(
      JSON.stringify({ error: 'internal', message: (err as Error).message }) + '\n',
    );
    return 3;
  }
}

const isDirectRun = process.argv[1]?.endsWith('cli.js') || process.argv[1]?.endsWith('hydra-bridge');
if (isDirectRun) {
  process.exit(main(process.argv.slice(2)));
}
