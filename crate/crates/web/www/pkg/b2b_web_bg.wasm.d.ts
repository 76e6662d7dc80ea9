/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_derivativedemo_free: (a: number, b: number) => void;
export const burgers_field: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const darcy_sample: (a: number, b: number) => [number, number, number, number];
export const derivativedemo_new: (a: number, b: number) => [number, number, number];
export const derivativedemo_predict: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
