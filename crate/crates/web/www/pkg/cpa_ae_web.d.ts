/* tslint:disable */
/* eslint-disable */

/**
 * `2-16-16-1-16-16-2` autoencoder trained on eight rotations of `(1, 0)`.
 */
export class CircleTrainer {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Decoder image of `n` latent points spanning the training codes,
     * flattened as `x0, y0, x1, y1, …`.
     */
    curve(n: number): Float64Array;
    constructor(lambda: number, seed: number);
    /**
     * Reconstructions of the training points, flattened.
     */
    reconstructions(): Float64Array;
    /**
     * Trains `epochs` more epochs and returns the test MSE.
     */
    step(epochs: number): number;
    /**
     * Training points, flattened.
     */
    train_points(): Float64Array;
    readonly epochs: number;
}

/**
 * Region ids of a `resolution²` raster over `[-extent, extent]²`, row-major
 * with `y` outer, and the boundary mask.
 */
export class Raster {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly boundary: Uint8Array;
    readonly ids: Uint32Array;
    readonly regions: number;
}

/**
 * Partition of a randomly initialized `2-w-…-w-h-w-…-w-2` autoencoder with
 * `depth` hidden layers on each side.
 */
export function random_partition(width: number, depth: number, latent: number, seed: number, resolution: number, extent: number): Raster;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_circletrainer_free: (a: number, b: number) => void;
    readonly __wbg_raster_free: (a: number, b: number) => void;
    readonly circletrainer_curve: (a: number, b: number) => [number, number, number, number];
    readonly circletrainer_epochs: (a: number) => number;
    readonly circletrainer_new: (a: number, b: number) => [number, number, number];
    readonly circletrainer_reconstructions: (a: number) => [number, number, number, number];
    readonly circletrainer_step: (a: number, b: number) => [number, number, number];
    readonly circletrainer_train_points: (a: number) => [number, number];
    readonly random_partition: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly raster_boundary: (a: number) => [number, number];
    readonly raster_ids: (a: number) => [number, number];
    readonly raster_regions: (a: number) => number;
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
