/** Binary P6 pixmap encoding: the service's mandatory image wire format.
 * The browser decodes whatever the user uploads (PNG, JPEG, ...) onto a
 * canvas; the RGBA pixels are re-encoded as P6 here before upload. */

export type RgbaImage = {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel, row-major (same layout as ImageData.data). */
  data: Uint8ClampedArray | Uint8Array;
};

export function encodePpm(image: RgbaImage): Uint8Array {
  const { width, height, data } = image;
  if (data.length !== width * height * 4) {
    throw new Error("pixel buffer does not match dimensions");
  }
  const header = `P6\n${width} ${height}\n255\n`;
  const headerBytes = new TextEncoder().encode(header);
  const out = new Uint8Array(headerBytes.length + width * height * 3);
  out.set(headerBytes, 0);
  let o = headerBytes.length;
  for (let i = 0; i < data.length; i += 4) {
    out[o++] = data[i];
    out[o++] = data[i + 1];
    out[o++] = data[i + 2];
  }
  return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export function encodePpmBase64(image: RgbaImage): string {
  return bytesToBase64(encodePpm(image));
}
