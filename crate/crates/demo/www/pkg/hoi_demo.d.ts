/* tslint:disable */
/* eslint-disable */

/**
 * IoU, GIoU and the union box of two corner boxes.
 */
export function box_overlap(a: Float64Array, b: Float64Array): string;

/**
 * One synthetic scene, its query outputs and the two-stage labels.
 */
export function match_scene(seed: bigint, topk: number, thres_is: number, box_noise: number, score_noise: number, queries: number): string;

/**
 * Teacher distribution over actions that are all valid for one object.
 * `seen[i]` marks action `i` as seen; seen actions must come first.
 */
export function soft_target(similarities: Float64Array, seen: Uint8Array, gamma: number, unseen_only: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly box_overlap: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly match_scene: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly soft_target: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
