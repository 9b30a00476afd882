/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_comparison_free: (a: number, b: number) => void;
export const __wbg_frontier_free: (a: number, b: number) => void;
export const __wbg_scenario_free: (a: number, b: number) => void;
export const __wbg_scree_free: (a: number, b: number) => void;
export const comparison_errors: (a: number) => [number, number];
export const comparison_matrix: (a: number, b: number) => [number, number];
export const comparison_maxErrors: (a: number) => [number, number];
export const comparison_methods: (a: number) => [number, number];
export const comparison_p: (a: number) => number;
export const comparison_population: (a: number) => [number, number];
export const frontier_c: (a: number) => [number, number];
export const frontier_gross: (a: number, b: number) => [number, number];
export const frontier_methods: (a: number) => [number, number];
export const frontier_outOfSample: (a: number, b: number) => [number, number];
export const frontier_trueRisk: (a: number, b: number) => [number, number];
export const scenario_compare: (a: number) => [number, number, number];
export const scenario_frontier: (a: number, b: number, c: number) => [number, number, number];
export const scenario_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const scenario_scree: (a: number) => [number, number, number];
export const scree_eigenvalues: (a: number) => [number, number];
export const scree_k1: (a: number) => number;
export const scree_k2: (a: number) => number;
export const scree_kHat: (a: number) => number;
export const scree_phi: (a: number) => number;
export const scree_ratios: (a: number) => [number, number];
export const scree_variant: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
