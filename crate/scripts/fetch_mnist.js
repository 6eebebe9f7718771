#!/usr/bin/env node
// Builds MNIST IDX files from the `mnist` npm package (10,000 real MNIST
// digits bundled as JSON). Produces the four standard-format files under
// data/mnist/ with a stratified 80/20 train/test split.
//
// Usage:  npm install mnist && node scripts/fetch_mnist.js [outdir]
//
// The full 60k/10k MNIST is preferable when available; point the simulator
// at it with --mnist-dir. The subset built here uses the same wire format.

const fs = require("fs");
const path = require("path");

const outDir = process.argv[2] || path.join(__dirname, "..", "data", "mnist");
fs.mkdirSync(outDir, { recursive: true });

const ROWS = 28;
const COLS = 28;
const DIM = ROWS * COLS;

// Deterministic shuffle (splitmix64-based LCG) so the files are reproducible.
let shuffleState = 0x9e3779b97f4a7c15n;
function nextU64() {
  shuffleState = (shuffleState + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
  let z = shuffleState;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
  return z ^ (z >> 31n);
}
function shuffle(arr) {
  for (let i = arr.length - 1; i > 0; i--) {
    const j = Number(nextU64() % BigInt(i + 1));
    [arr[i], arr[j]] = [arr[j], arr[i]];
  }
}

const train = [];
const test = [];
for (let digit = 0; digit <= 9; digit++) {
  const raw = require(`mnist/src/digits/${digit}.json`).data;
  if (raw.length % DIM !== 0) throw new Error(`digit ${digit}: bad length`);
  const n = raw.length / DIM;
  const nTrain = Math.round(n * 0.8);
  for (let s = 0; s < n; s++) {
    const px = Buffer.alloc(DIM);
    for (let i = 0; i < DIM; i++) {
      px[i] = Math.min(255, Math.max(0, Math.round(raw[s * DIM + i] * 255)));
    }
    (s < nTrain ? train : test).push({ label: digit, px });
  }
  console.log(`digit ${digit}: ${n} samples (${nTrain} train)`);
}
shuffle(train);
shuffle(test);

function writeIdx(name, samples, kind) {
  const file = path.join(outDir, name);
  if (kind === "images") {
    const header = Buffer.alloc(16);
    header.writeUInt32BE(0x00000803, 0);
    header.writeUInt32BE(samples.length, 4);
    header.writeUInt32BE(ROWS, 8);
    header.writeUInt32BE(COLS, 12);
    fs.writeFileSync(file, Buffer.concat([header, ...samples.map((s) => s.px)]));
  } else {
    const header = Buffer.alloc(8);
    header.writeUInt32BE(0x00000801, 0);
    header.writeUInt32BE(samples.length, 4);
    fs.writeFileSync(
      file,
      Buffer.concat([header, Buffer.from(samples.map((s) => s.label))])
    );
  }
  console.log(`wrote ${file}`);
}

writeIdx("train-images-idx3-ubyte", train, "images");
writeIdx("train-labels-idx1-ubyte", train, "labels");
writeIdx("t10k-images-idx3-ubyte", test, "images");
writeIdx("t10k-labels-idx1-ubyte", test, "labels");
console.log(`train=${train.length} test=${test.length}`);
