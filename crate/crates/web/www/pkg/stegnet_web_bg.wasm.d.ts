/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const changeMap: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const sppLayout: (a: number, b: number, c: number) => [number, number, number, number];
export const srmFilterNames: () => [number, number];
export const srmResiduals: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const syntheticCover: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
