/* tslint:disable */
/* eslint-disable */

/**
 * Two sampling paths from the same noise: prompt fixed to the query, and
 * prompt refined by the controller at `refine_steps` evenly spaced times.
 */
export class Comparison {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    closed(): Float64Array;
    /**
     * Fixed-prompt path `x_T .. x_0` as `[x, y, ...]`.
     */
    fixed(): Float64Array;
    refine_times(): Uint32Array;
    readonly closed_prompt: string;
    readonly closed_reward: number;
    readonly fixed_reward: number;
}

export function comparePaths(query: string, refine_steps: number, seed: number, nearest: boolean): Comparison;

export function modeCenters(): Float64Array;

export function noiseCloud(mode: number, t: number, n: number, seed: number): Float64Array;

export function queryNames(): string[];

export function scheduleTable(cosine: boolean, steps: number, beta_min: number, beta_max: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_comparison_free: (a: number, b: number) => void;
    readonly comparePaths: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly comparison_closed: (a: number) => [number, number];
    readonly comparison_closed_prompt: (a: number) => [number, number];
    readonly comparison_closed_reward: (a: number) => number;
    readonly comparison_fixed: (a: number) => [number, number];
    readonly comparison_fixed_reward: (a: number) => number;
    readonly comparison_refine_times: (a: number) => [number, number];
    readonly modeCenters: () => [number, number];
    readonly noiseCloud: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly queryNames: () => [number, number];
    readonly scheduleTable: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
