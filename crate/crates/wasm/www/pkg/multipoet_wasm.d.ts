/* tslint:disable */
/* eslint-disable */

export class Comparison {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Estimate of method `i`, row-major `p × p`.
     */
    matrix(i: number): Float64Array;
    /**
     * Relative Frobenius error of each method.
     */
    readonly errors: Float64Array;
    readonly maxErrors: Float64Array;
    readonly methods: string[];
    readonly p: number;
    readonly population: Float64Array;
}

export class Frontier {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    gross(i: number): Float64Array;
    /**
     * Realized risk over the holding sample for method `i`.
     */
    outOfSample(i: number): Float64Array;
    /**
     * `√(w' Σ w)` under the population covariance for method `i`.
     */
    trueRisk(i: number): Float64Array;
    readonly c: Float64Array;
    readonly methods: string[];
}

export class Scenario {
    free(): void;
    [Symbol.dispose](): void;
    compare(): Comparison;
    frontier(c_values: Float64Array): Frontier;
    /**
     * `p` assets in `groups` equal groups, `k` global and `r` local factors
     * per group, `t` observations.
     */
    constructor(p: number, groups: number, t: number, k: number, r: number, seed: number);
    scree(): Scree;
}

export class Scree {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly eigenvalues: Float64Array;
    readonly k1: number;
    readonly k2: number;
    readonly kHat: number;
    readonly phi: number;
    readonly ratios: Float64Array;
    readonly variant: string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_comparison_free: (a: number, b: number) => void;
    readonly __wbg_frontier_free: (a: number, b: number) => void;
    readonly __wbg_scenario_free: (a: number, b: number) => void;
    readonly __wbg_scree_free: (a: number, b: number) => void;
    readonly comparison_errors: (a: number) => [number, number];
    readonly comparison_matrix: (a: number, b: number) => [number, number];
    readonly comparison_maxErrors: (a: number) => [number, number];
    readonly comparison_methods: (a: number) => [number, number];
    readonly comparison_p: (a: number) => number;
    readonly comparison_population: (a: number) => [number, number];
    readonly frontier_c: (a: number) => [number, number];
    readonly frontier_gross: (a: number, b: number) => [number, number];
    readonly frontier_methods: (a: number) => [number, number];
    readonly frontier_outOfSample: (a: number, b: number) => [number, number];
    readonly frontier_trueRisk: (a: number, b: number) => [number, number];
    readonly scenario_compare: (a: number) => [number, number, number];
    readonly scenario_frontier: (a: number, b: number, c: number) => [number, number, number];
    readonly scenario_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly scenario_scree: (a: number) => [number, number, number];
    readonly scree_eigenvalues: (a: number) => [number, number];
    readonly scree_k1: (a: number) => number;
    readonly scree_k2: (a: number) => number;
    readonly scree_kHat: (a: number) => number;
    readonly scree_phi: (a: number) => number;
    readonly scree_ratios: (a: number) => [number, number];
    readonly scree_variant: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
