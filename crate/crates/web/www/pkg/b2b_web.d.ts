/* tslint:disable */
/* eslint-disable */

/**
 * A linear operator learned from random cubic polynomials and their derivatives.
 */
export class DerivativeDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Trains both bases for `steps` steps each, then fits the coefficient matrix.
     */
    constructor(seed: number, steps: number);
    /**
     * Predicted and exact derivative of `c0 + c1 x + c2 x² + c3 x³` on a uniform grid of `[-10, 10]`.
     *
     * Returns `[x; n] ++ [prediction; n] ++ [exact; n]`.
     */
    predict(c0: number, c1: number, c2: number, c3: number): Float64Array;
}

/**
 * A Burgers solution on an `nx × nt` grid over `[0, 1) × [0, 1]`, time-major.
 */
export function burgers_field(seed: number, nu: number, nx: number, nt: number): Float64Array;

/**
 * One permeability draw `u` and its Darcy solution `s` on `m` uniform points of `[0, 1]`.
 *
 * Returns `[x; m] ++ [u; m] ++ [s; m]`.
 */
export function darcy_sample(seed: number, m: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_derivativedemo_free: (a: number, b: number) => void;
    readonly burgers_field: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly darcy_sample: (a: number, b: number) => [number, number, number, number];
    readonly derivativedemo_new: (a: number, b: number) => [number, number, number];
    readonly derivativedemo_predict: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
