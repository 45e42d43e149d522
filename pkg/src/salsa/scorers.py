"""Reference scorer processes speaking the external protocol.

    python -m salsa.scorers echo               # 0.0 for every request
    python -m salsa.scorers sum --shuffle      # sum of all features, replies shuffled
    python -m salsa.scorers sum --drop 1       # omits the last reply
    python -m salsa.scorers sum --sleep 5      # stalls before replying
"""

import argparse
import random
import sys
import time


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m salsa.scorers")
    ap.add_argument("mode", choices=["echo", "sum"])
    ap.add_argument("--shuffle", action="store_true")
    ap.add_argument("--drop", type=int, default=0, help="number of replies to omit")
    ap.add_argument("--sleep", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    replies = []
    for line in sys.stdin:
        line = line.rstrip("\n")
        if not line:
            continue
        fields = line.split("\t")
        rid = fields[0]
        if args.mode == "echo":
            score = 0.0
        else:
            n_vectors = (len(fields) - 1) // 2
            score = sum(float(x) for csv in fields[1 + n_vectors :] for x in csv.split(",") if x)
        replies.append(f"{rid}\t{score!r}\n")
    if args.drop:
        replies = replies[: max(0, len(replies) - args.drop)]
    if args.shuffle:
        random.Random(args.seed).shuffle(replies)
    if args.sleep:
        time.sleep(args.sleep)
    sys.stdout.writelines(replies)


if __name__ == "__main__":
    main()
