import * as crypto from "node:crypto";
import { describe, expect, it } from "vitest";

import { md5Hex } from "../src/md5";

function oracle(text: string): string {
  return crypto.createHash("md5").update(Buffer.from(text, "utf-8")).digest("hex");
}

describe("md5", () => {
  it("matches the classic vectors", () => {
    expect(md5Hex("")).toBe("d41d8cd98f00b204e9800998ecf8427e");
    expect(md5Hex("abc")).toBe("900150983cd24fb0d6963f7d28e17f72");
    expect(md5Hex("The quick brown fox jumps over the lazy dog"))
      .toBe("9e107d9d372bb6826bd81d3542a419d6");
  });

  it("hashes closure source text like the platform md5", () => {
    const samples = [
      "function(){}",
      "function pageTick() { tick(); }",
      "() => { app.ticks += 1; }",
      "function(){let s='âêî中';return s}",
      "x".repeat(200),
      "y".repeat(64),  // exactly one block after padding boundary cases
      "z".repeat(55),
      "w".repeat(56),
    ];
    for (const text of samples) {
      expect(md5Hex(text)).toBe(oracle(text));
    }
  });

  it("handles multi-megabit inputs", () => {
    const text = Array.from({ length: 5000 }, (_, i) => `line ${i};`).join("\n");
    expect(md5Hex(text)).toBe(oracle(text));
  });
});
