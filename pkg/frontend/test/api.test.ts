import { describe, expect, it } from "vitest";

import {
  QueryDraft,
  buildSearchBody,
  validateDraft,
} from "../src/api.js";

const IMAGE = "UDYKMiAyCjI1NQo="; // placeholder payload

function draft(overrides: Partial<QueryDraft> = {}): QueryDraft {
  return {
    option: 1,
    imageBase64: IMAGE,
    guidedCategory: null,
    roi: null,
    k: 10,
    appearanceWeight: 0.7,
    ...overrides,
  };
}

describe("buildSearchBody", () => {
  it("carries the selected category verbatim for option 2", () => {
    const body = buildSearchBody(
      draft({ option: 2, guidedCategory: "blouse" }),
    );
    expect(body.guided_category).toBe("blouse");
    expect(body.option).toBe(2);
  });

  it("echoes unusual category strings without normalization", () => {
    const body = buildSearchBody(
      draft({ option: 2, guidedCategory: "T-Shirts & Tops" }),
    );
    expect(body.guided_category).toBe("T-Shirts & Tops");
  });

  it("option 1 sends neither guide nor roi", () => {
    const body = buildSearchBody(draft());
    expect(body).not.toHaveProperty("guided_category");
    expect(body).not.toHaveProperty("roi");
    expect(body.image_b64).toBe(IMAGE);
    expect(body.k).toBe(10);
    expect(body.appearance_weight).toBeCloseTo(0.7);
  });

  it("option 3 includes the rectangle", () => {
    const roi = { x: 4, y: 8, w: 15, h: 16 };
    const body = buildSearchBody(draft({ option: 3, roi }));
    expect(body.roi).toEqual(roi);
  });

  it("throws on drafts the server would reject", () => {
    expect(() => buildSearchBody(draft({ option: 2 }))).toThrow(/category/);
    expect(() => buildSearchBody(draft({ option: 3 }))).toThrow(/rectangle/);
    expect(() =>
      buildSearchBody(draft({ guidedCategory: "bag" })),
    ).toThrow(/option 1/);
    expect(() => buildSearchBody(draft({ imageBase64: null }))).toThrow(
      /image/,
    );
  });
});

describe("validateDraft", () => {
  it("mirrors the server's field-presence rules", () => {
    expect(validateDraft(draft())).toBeNull();
    expect(
      validateDraft(draft({ option: 2, guidedCategory: "bag" })),
    ).toBeNull();
    expect(
      validateDraft(draft({ option: 3, roi: { x: 0, y: 0, w: 5, h: 5 } })),
    ).toBeNull();

    expect(validateDraft(draft({ option: 2 }))).toMatch(/category/);
    expect(validateDraft(draft({ option: 3 }))).toMatch(/rectangle/);
    expect(
      validateDraft(draft({ roi: { x: 0, y: 0, w: 5, h: 5 } })),
    ).toMatch(/option 3/);
    expect(validateDraft(draft({ k: 0 }))).toMatch(/k/);
    expect(validateDraft(draft({ imageBase64: null }))).toMatch(/image/);
  });
});
