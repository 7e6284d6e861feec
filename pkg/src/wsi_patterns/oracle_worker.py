"""Reference classifier worker: serves the synthetic oracle over stdin/stdout.

Run as ``python -m wsi_patterns.oracle_worker [--config oracle.json]``. A real
model worker only has to speak the same line protocol.

Noise draws are keyed on a CRC of the decoded pixels rather than on the
request id, so answers do not depend on how the client batches requests.
"""

import argparse
import json
import sys
import zlib

from .gateway import OracleConfig, decode_png, oracle_classify


def serve(config: OracleConfig, stdin=sys.stdin, stdout=sys.stdout):
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        patch = decode_png(req["png_b64"])
        vec = oracle_classify(patch, config, zlib.crc32(patch.tobytes()))
        stdout.write(json.dumps({"id": req["id"], "probs": list(vec.p)}) + "\n")
        stdout.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="oracle config JSON file")
    args = parser.parse_args(argv)
    config = OracleConfig()
    if args.config:
        with open(args.config) as fh:
            config = OracleConfig.from_json(json.load(fh))
    serve(config)


if __name__ == "__main__":
    main()
