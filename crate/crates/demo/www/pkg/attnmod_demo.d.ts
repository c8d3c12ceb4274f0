/* tslint:disable */
/* eslint-disable */

/**
 * Cross-attention map of one prompt token at `step`, under `mode`
 * (`off`, `mask_only`, `reweight_only`, `both`).
 */
export function cross_heatmap(prompt: string, seed: bigint, step: number, mode: string, token: number): Uint8Array;

/**
 * Side length of the square patch grid the heatmaps are drawn on.
 */
export function grid_size(): number;

/**
 * Parses `prompt` and returns the result as JSON.
 */
export function parse(prompt: string): string;

/**
 * Head-averaged self-attention row of patch `(h, w)` at `step`, with the
 * early-phase temperature set to `tau`.
 */
export function self_heatmap(prompt: string, seed: bigint, step: number, tau: number, h: number, w: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly cross_heatmap: (a: number, b: number, c: bigint, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly grid_size: () => number;
    readonly parse: (a: number, b: number) => [number, number, number, number];
    readonly self_heatmap: (a: number, b: number, c: bigint, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
