/**
 * Upscaling models. The reference model is bicubic (Catmull-Rom, a = -0.5)
 * followed by an unsharp mask (Gaussian sigma 1, radius 3, amount 0.6),
 * numerically matching the client's builtin oracle: texel centers at
 * (i + 0.5) / n, clamp-to-edge addressing, outputs clamped to [0, 1].
 * Scale 1 is an exact pass-through.
 */

export interface ImageData {
  data: Float64Array; // row-major, channel-interleaved rgb in [0, 1]
  width: number;
  height: number;
}

export interface UpscaleModel {
  name: string;
  upscale(image: ImageData, scale: number, prompt?: string): ImageData;
}

const CHANNELS = 3;
const GAUSS_SIGMA = 1.0;
const GAUSS_RADIUS = 3;
const UNSHARP_AMOUNT = 0.6;

function catmullRomWeights(t: number): [number, number, number, number] {
  const t2 = t * t;
  const t3 = t2 * t;
  return [
    -0.5 * t3 + t2 - 0.5 * t,
    1.5 * t3 - 2.5 * t2 + 1.0,
    -1.5 * t3 + 2.0 * t2 + 0.5 * t,
    0.5 * t3 - 0.5 * t2,
  ];
}

function axisTaps(nSrc: number, nDst: number): { taps: Int32Array; weights: Float64Array } {
  const taps = new Int32Array(nDst * 4);
  const weights = new Float64Array(nDst * 4);
  for (let i = 0; i < nDst; i++) {
    const pos = ((i + 0.5) * nSrc) / nDst - 0.5;
    const base = Math.floor(pos);
    const w = catmullRomWeights(pos - base);
    for (let k = 0; k < 4; k++) {
      taps[i * 4 + k] = Math.min(Math.max(base - 1 + k, 0), nSrc - 1);
      weights[i * 4 + k] = w[k];
    }
  }
  return { taps, weights };
}

export function bicubicResize(img: ImageData, outW: number, outH: number): ImageData {
  const x = axisTaps(img.width, outW);
  const y = axisTaps(img.height, outH);
  // horizontal pass
  const mid = new Float64Array(img.height * outW * CHANNELS);
  for (let row = 0; row < img.height; row++) {
    for (let col = 0; col < outW; col++) {
      for (let c = 0; c < CHANNELS; c++) {
        let acc = 0;
        for (let k = 0; k < 4; k++) {
          acc += x.weights[col * 4 + k] * img.data[(row * img.width + x.taps[col * 4 + k]) * CHANNELS + c];
        }
        mid[(row * outW + col) * CHANNELS + c] = acc;
      }
    }
  }
  const out = new Float64Array(outH * outW * CHANNELS);
  for (let row = 0; row < outH; row++) {
    for (let col = 0; col < outW; col++) {
      for (let c = 0; c < CHANNELS; c++) {
        let acc = 0;
        for (let k = 0; k < 4; k++) {
          acc += y.weights[row * 4 + k] * mid[(y.taps[row * 4 + k] * outW + col) * CHANNELS + c];
        }
        out[(row * outW + col) * CHANNELS + c] = Math.min(Math.max(acc, 0), 1);
      }
    }
  }
  return { data: out, width: outW, height: outH };
}

function gaussianKernel(sigma: number, radius: number): Float64Array {
  const k = new Float64Array(2 * radius + 1);
  let sum = 0;
  for (let i = -radius; i <= radius; i++) {
    const v = Math.exp(-(i * i) / (2 * sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (let i = 0; i < k.length; i++) k[i] /= sum;
  return k;
}

export function gaussianBlur(img: ImageData, sigma = GAUSS_SIGMA, radius = GAUSS_RADIUS): ImageData {
  const k = gaussianKernel(sigma, radius);
  const { width, height } = img;
  const tmp = new Float64Array(img.data.length);
  // vertical pass, clamp-to-edge
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      for (let c = 0; c < CHANNELS; c++) {
        let acc = 0;
        for (let i = -radius; i <= radius; i++) {
          const r = Math.min(Math.max(row + i, 0), height - 1);
          acc += k[i + radius] * img.data[(r * width + col) * CHANNELS + c];
        }
        tmp[(row * width + col) * CHANNELS + c] = acc;
      }
    }
  }
  const out = new Float64Array(img.data.length);
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      for (let c = 0; c < CHANNELS; c++) {
        let acc = 0;
        for (let i = -radius; i <= radius; i++) {
          const cc = Math.min(Math.max(col + i, 0), width - 1);
          acc += k[i + radius] * tmp[(row * width + cc) * CHANNELS + c];
        }
        out[(row * width + col) * CHANNELS + c] = acc;
      }
    }
  }
  return { data: out, width, height };
}

export class ReferenceModel implements UpscaleModel {
  name = "reference";

  upscale(image: ImageData, scale: number): ImageData {
    if (scale === 1) {
      return { data: image.data.slice(), width: image.width, height: image.height };
    }
    const up = bicubicResize(image, image.width * scale, image.height * scale);
    const blurred = gaussianBlur(up);
    const out = new Float64Array(up.data.length);
    for (let i = 0; i < out.length; i++) {
      const v = up.data[i] + UNSHARP_AMOUNT * (up.data[i] - blurred.data[i]);
      out[i] = Math.min(Math.max(v, 0), 1);
    }
    return { data: out, width: up.width, height: up.height };
  }
}

export async function mountModel(name: string): Promise<UpscaleModel> {
  if (name === "reference") {
    return new ReferenceModel();
  }
  if (name.endsWith(".js") || name.endsWith(".mjs") || name.startsWith("/") || name.startsWith(".")) {
    try {
      const mod = await import(new URL(name, `file://${process.cwd()}/`).href);
      const model: UpscaleModel = mod.default ?? mod.model;
      if (!model || typeof model.upscale !== "function") {
        throw new Error("plugin must default-export an object with an upscale() method");
      }
      return model;
    } catch (err) {
      throw new Error(`cannot mount model plugin ${name}: ${(err as Error).message}`);
    }
  }
  throw new Error(`unknown model ${name}; available models: reference, or a plugin .js path`);
}
