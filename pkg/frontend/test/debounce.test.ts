import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { GENERATE_DEBOUNCE_MS, debounce } from "../src/debounce.js";

describe("debounce", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("collapses a burst into one trailing call with the last args", () => {
    const fn = vi.fn();
    const d = debounce(fn, 250);
    d(1);
    d(2);
    d(3);
    expect(fn).not.toHaveBeenCalled();
    vi.advanceTimersByTime(249);
    expect(fn).not.toHaveBeenCalled();
    vi.advanceTimersByTime(1);
    expect(fn).toHaveBeenCalledTimes(1);
    expect(fn).toHaveBeenCalledWith(3);
  });

  it("keeps deferring while calls arrive faster than the wait", () => {
    const fn = vi.fn();
    const d = debounce(fn, 250);
    for (let i = 0; i < 5; i++) {
      d(i);
      vi.advanceTimersByTime(200);
    }
    expect(fn).not.toHaveBeenCalled();
    vi.advanceTimersByTime(250);
    expect(fn).toHaveBeenCalledTimes(1);
    expect(fn).toHaveBeenCalledWith(4);
  });

  it("fires again for a later independent call", () => {
    const fn = vi.fn();
    const d = debounce(fn, 250);
    d("a");
    vi.advanceTimersByTime(250);
    d("b");
    vi.advanceTimersByTime(250);
    expect(fn.mock.calls).toEqual([["a"], ["b"]]);
  });

  it("uses the slider debounce constant of 250 ms", () => {
    expect(GENERATE_DEBOUNCE_MS).toBe(250);
  });
});
