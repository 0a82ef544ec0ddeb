#!/usr/bin/env python3
"""Stage-throughput experiment: watch per-stage input/output ratios converge.

Feeds tokens at a fixed rate through a chain of artificially throttled
stages and prints each stage's windowed performance ratio over time. A ratio
of 1.0 means the stage keeps up; above 1.0 it receives frames faster than it
publishes them (overloaded).
"""

import argparse
import time

from airmosaic.pipeline import FLUSH, Link, StageStats, StageWorker


class Identity:
    def process(self, item):
        return [item]

    def flush(self):
        return []


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rate", type=float, default=5.0, help="input rate [Hz]")
    parser.add_argument(
        "--stage-seconds", type=float, nargs="+", default=[0.05, 0.4, 0.05],
        help="per-frame processing time of each stage",
    )
    parser.add_argument("--duration", type=float, default=60.0)
    parser.add_argument("--window", type=float, default=10.0)
    args = parser.parse_args()

    names = [f"stage{i+1}({s:.2f}s)" for i, s in enumerate(args.stage_seconds)]
    stats = {n: StageStats(n, window=args.window) for n in names}
    links = []
    upstream = None
    for n in names:
        links.append(Link(1_000_000, upstream, stats[n]))
        upstream = stats[n]
    links.append(Link(1_000_000, upstream, None))
    workers = [
        StageWorker(n, Identity(), links[i], links[i + 1], throttle=s)
        for i, (n, s) in enumerate(zip(names, args.stage_seconds))
    ]
    for w in workers:
        w.start()

    print("t[s]   " + "  ".join(f"{n:>16}" for n in names))
    t0 = time.monotonic()
    next_put = t0
    next_print = t0 + 2.0
    while True:
        now = time.monotonic()
        if now - t0 >= args.duration:
            break
        if now >= next_put:
            links[0].put(object())
            next_put += 1.0 / args.rate
        if now >= next_print:
            row = []
            for n in names:
                s = stats[n].sample(now)
                row.append(f"in {s['f_in']:4.1f} out {s['f_out']:4.1f} d {s['delta_perf']:5.2f}")
            print(f"{now - t0:5.1f}  " + "  ".join(f"{c:>16}" for c in row))
            next_print += 2.0
        time.sleep(0.005)

    links[0].put(FLUSH)
    for link in links:
        link.close()
    print("done; a throttled stage settles at input_rate / its own rate.")


if __name__ == "__main__":
    main()
