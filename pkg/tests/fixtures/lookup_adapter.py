"""Test adapter speaking the line-delimited JSON predictor protocol.

Usage: lookup_adapter.py PREDICTIONS_JSON [--limit N]

PREDICTIONS_JSON maps request sequence ids (as strings) to prediction text;
missing ids fall back to "".  --limit N answers only the first N requests,
simulating a partially-responsive adapter.
"""

import json
import sys


def main() -> int:
    table = json.loads(open(sys.argv[1]).read()) if len(sys.argv) > 1 else {}
    limit = None
    if "--limit" in sys.argv:
        limit = int(sys.argv[sys.argv.index("--limit") + 1])
    answered = 0
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if limit is not None and answered >= limit:
            continue
        req = json.loads(line)
        prediction = table.get(str(req["id"]), "")
        print(json.dumps({"id": req["id"], "prediction": prediction}), flush=True)
        answered += 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
