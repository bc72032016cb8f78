/* tslint:disable */
/* eslint-disable */

/**
 * `stego - cover` per pixel, each -1, 0 or 1.
 */
export function changeMap(pixels: Uint8Array, width: number, height: number, payload: number, seed: number): Int8Array;

/**
 * `[map_side, bins, win, stride, bins, win, stride, ...]` for the final
 * feature map of a square input of side `input_size`.
 */
export function sppLayout(input_size: number, levels: Uint32Array): Uint32Array;

export function srmFilterNames(): string[];

/**
 * The 30 residual planes of the fixed SRM layer, channel-major.
 */
export function srmResiduals(pixels: Uint8Array, width: number, height: number): Float32Array;

/**
 * Row-major pixels of a square procedural cover.
 */
export function syntheticCover(size: number, grain: number, seed: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly changeMap: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly sppLayout: (a: number, b: number, c: number) => [number, number, number, number];
    readonly srmFilterNames: () => [number, number];
    readonly srmResiduals: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly syntheticCover: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
