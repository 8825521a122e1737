/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_circletrainer_free: (a: number, b: number) => void;
export const __wbg_raster_free: (a: number, b: number) => void;
export const circletrainer_curve: (a: number, b: number) => [number, number, number, number];
export const circletrainer_epochs: (a: number) => number;
export const circletrainer_new: (a: number, b: number) => [number, number, number];
export const circletrainer_reconstructions: (a: number) => [number, number, number, number];
export const circletrainer_step: (a: number, b: number) => [number, number, number];
export const circletrainer_train_points: (a: number) => [number, number];
export const random_partition: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const raster_boundary: (a: number) => [number, number];
export const raster_ids: (a: number) => [number, number];
export const raster_regions: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
