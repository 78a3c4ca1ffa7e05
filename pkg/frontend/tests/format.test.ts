import { describe, expect, it } from "vitest";
import { formatKappa, formatPercent } from "../src/format.js";
import { kappa } from "./fakes.js";

describe("formatPercent", () => {
  it("renders a fraction with one decimal", () => {
    expect(formatPercent(0.5)).toBe("50.0%");
    expect(formatPercent(1)).toBe("100.0%");
    expect(formatPercent(0)).toBe("0.0%");
    expect(formatPercent(0.748)).toBe("74.8%");
  });
});

describe("formatKappa", () => {
  it("renders kappa as a one-decimal percentage", () => {
    expect(formatKappa(kappa(0.664))).toBe("66.4%");
    expect(formatKappa(kappa(1))).toBe("100.0%");
    expect(formatKappa(kappa(0.4))).toBe("40.0%");
  });

  it("signals undefined instead of showing a number", () => {
    expect(formatKappa(kappa(null, true))).toBe("not computable");
    expect(formatKappa(null)).toBe("not computable");
    expect(formatKappa(undefined)).toBe("not computable");
  });
});
