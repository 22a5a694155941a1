/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_comparison_free: (a: number, b: number) => void;
export const comparePaths: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const comparison_closed: (a: number) => [number, number];
export const comparison_closed_prompt: (a: number) => [number, number];
export const comparison_closed_reward: (a: number) => number;
export const comparison_fixed: (a: number) => [number, number];
export const comparison_fixed_reward: (a: number) => number;
export const comparison_refine_times: (a: number) => [number, number];
export const modeCenters: () => [number, number];
export const noiseCloud: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const queryNames: () => [number, number];
export const scheduleTable: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
