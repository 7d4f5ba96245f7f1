/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_attention_rgba: (a: number) => [number, number, number, number];
export const demo_clean_rgba: (a: number) => [number, number];
export const demo_depth_rgba: (a: number) => [number, number];
export const demo_enhanced_rgba: (a: number, b: number) => [number, number, number, number];
export const demo_event_count: (a: number) => number;
export const demo_events_rgba: (a: number) => [number, number];
export const demo_height: (a: number) => number;
export const demo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demo_night_rgba: (a: number) => [number, number];
export const demo_scene: (a: number) => [number, number];
export const demo_sobel_rgba: (a: number, b: number) => [number, number, number, number];
export const demo_weather_intensity: (a: number) => number;
export const demo_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
