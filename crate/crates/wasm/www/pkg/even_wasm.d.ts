/* tslint:disable */
/* eslint-disable */

/**
 * One rendered scene with its night frame and events.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    attention_rgba(): Uint8Array;
    clean_rgba(): Uint8Array;
    depth_rgba(): Uint8Array;
    /**
     * Attention-gated gamma lift of the night frame.
     */
    enhanced_rgba(gamma_target: number): Uint8Array;
    event_count(): number;
    events_rgba(): Uint8Array;
    height(): number;
    /**
     * Renders scene `seed` at `size × size` under `weather`, with event threshold `threshold`.
     */
    constructor(seed: number, size: number, weather: string, threshold: number);
    night_rgba(): Uint8Array;
    scene(): string;
    /**
     * Sobel edges of the enhanced frame, the non-event edge cue.
     */
    sobel_rgba(gamma_target: number): Uint8Array;
    weather_intensity(): number;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_attention_rgba: (a: number) => [number, number, number, number];
    readonly demo_clean_rgba: (a: number) => [number, number];
    readonly demo_depth_rgba: (a: number) => [number, number];
    readonly demo_enhanced_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_event_count: (a: number) => number;
    readonly demo_events_rgba: (a: number) => [number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demo_night_rgba: (a: number) => [number, number];
    readonly demo_scene: (a: number) => [number, number];
    readonly demo_sobel_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_weather_intensity: (a: number) => number;
    readonly demo_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
