#!/usr/bin/env python3
"""Independent recomputation of the golden trace fixture.

Rebuilds every record of golden_trace.jsonl from scratch (own FNV-1a, own
float pipeline) and demands byte-level float equality with what the CLI
wrote. Catches any drift in the hash layout, the unit mapping, or the
fixture construction order.
"""

import json
import pathlib
import subprocess
import sys

MASK = 0xFFFFFFFFFFFFFFFF
PRIME = 0x100000001B3
OFFSET = 0xCBF29CE484222325

SEED = 11
VOCAB = ["<unk>", "yes", "no", "brown", "white", "gray", "round", "square"]
ITEMS = [("s1", "yes", "no"), ("s2", "brown", "white"), ("s3", "square", "round")]
DEGENERATE_TAGS = ["none", "unk", "noise", "zeros", "ones"]


def fnv_bytes(h, data):
    for b in data:
        h = ((h ^ b) * PRIME) & MASK
    return h


def fnv_u64(h, v):
    return fnv_bytes(h, v.to_bytes(8, "little"))


def fnv_u32(h, v):
    return fnv_bytes(h, v.to_bytes(4, "little"))


def fnv_str(h, s):
    return fnv_bytes(h, s.encode() + b"\x00")


def fixture_unit(seed, tag, sample_id, step, token):
    h = OFFSET
    h = fnv_u64(h, seed)
    h = fnv_str(h, tag)
    h = fnv_str(h, sample_id)
    h = fnv_u64(h, step)
    h = fnv_u32(h, token)
    return (h >> 11) * 2.0**-53 * 2.0 - 1.0


def expected_records():
    out = {}
    for sample_id, gold_name, bias_name in ITEMS:
        gold = VOCAB.index(gold_name)
        bias = VOCAB.index(bias_name)
        for step in range(2):
            prior = []
            for i in range(len(VOCAB)):
                v = 0.1 * fixture_unit(SEED, "prior", sample_id, step, i)
                if i == bias:
                    v += 1.0
                prior.append(v)

            real = list(prior)
            for i in range(len(VOCAB)):
                real[i] += 0.05 * fixture_unit(SEED, "real", sample_id, step, i)
                if i == gold:
                    real[i] += 0.6
            out[(sample_id, "real", step)] = real

            for tag in DEGENERATE_TAGS:
                row = list(prior)
                for i in range(len(VOCAB)):
                    row[i] += 0.05 * fixture_unit(SEED, tag, sample_id, step, i)
                out[(sample_id, tag, step)] = row
    return out


def expected_order():
    order = []
    for sample_id, _, _ in ITEMS:
        for tag in ["real"] + DEGENERATE_TAGS:
            for step in range(2):
                order.append((sample_id, tag, step))
    return order


def main():
    if len(sys.argv) != 3:
        print("usage: trace_spotcheck.py CLI_PATH WORK_DIR", file=sys.stderr)
        return 2
    cli = sys.argv[1]
    work = pathlib.Path(sys.argv[2])
    work.mkdir(parents=True, exist_ok=True)

    proc = subprocess.run(
        [cli, "make-fixtures", "--output", str(work), "--seed", str(SEED)],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        print(f"FAIL make-fixtures exited {proc.returncode}: {proc.stderr}", file=sys.stderr)
        return 1

    lines = (work / "golden_trace.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    failures = 0

    if header.get("format") != "vdd-trace/1" or header.get("vocab") != VOCAB:
        print(f"FAIL header mismatch: {header}", file=sys.stderr)
        failures += 1

    if len(lines) != 37:
        print(f"FAIL expected 37 lines, found {len(lines)}", file=sys.stderr)
        failures += 1

    want = expected_records()
    order = expected_order()
    for lineno, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)
        key = (rec["sample"], rec["variant"], rec["step"])
        if key != order[lineno - 2]:
            print(f"FAIL line {lineno}: key {key}, expected {order[lineno - 2]}", file=sys.stderr)
            failures += 1
            continue
        expected = want[key]
        got = rec["logits"]
        if len(got) != len(expected):
            print(f"FAIL line {lineno}: {len(got)} logits", file=sys.stderr)
            failures += 1
            continue
        for i, (g, e) in enumerate(zip(got, expected)):
            if g != e:  # exact: both sides are plain IEEE double arithmetic
                print(
                    f"FAIL {key} logit {i}: cli {g!r} != oracle {e!r}",
                    file=sys.stderr,
                )
                failures += 1

    if failures:
        print(f"trace spot-check: {failures} failures", file=sys.stderr)
        return 1
    print("trace spot-check: 36 records match exactly")
    return 0


if __name__ == "__main__":
    sys.exit(main())
