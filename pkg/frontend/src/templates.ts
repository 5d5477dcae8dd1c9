/**
 * Module-name templates: how `layers.<i>.<component>` maps onto a concrete
 * model's module paths.
 */

import { BridgeError, ComponentName } from './manifest.js';

export interface ModuleTemplate {
  name: string;
  modulePath(layer: number, component: ComponentName): string;
}

const ATTENTION: ReadonlySet<string> = new Set(['q_proj', 'k_proj', 'v_proj', 'o_proj']);

export const LLAMA_TEMPLATE: ModuleTemplate = {
  name: 'llama',
  modulePath(layer, component) {
    const block = ATTENTION.has(component) ? 'self_attn' : 'mlp';
    return `model.layers.${layer}.${block}.${component}`;
  },
};

const TEMPLATES: Record<string, ModuleTemplate> = {
  llama: LLAMA_TEMPLATE,
};

export function templateByName(name: string): ModuleTemplate {
  const template = TEMPLATES[name];
  if (!template) {
    throw new BridgeError(
      'unknown-template',
      `unknown template ${JSON.stringify(name)}; known: ${Object.keys(TEMPLATES).join(', ')}`,
    );
  }
  return template;
}
