#!/usr/bin/env python3
"""
Parse the toy world's .hexa domain definitions into the JSON schema.

Input:  pedp_policy/data/toy_schema.hexa
Output: pedp_policy/data/toy_schema.json (entities generated from each block's seed)
"""

import logging
from pathlib import Path

from pedp_policy.schema import (SCHEMA_HEXA_FILENAME, SCHEMA_JSON_FILENAME, build_schema_document,
                                parse_hexa_file, write_schema_json)

# Configure logging
logging.basicConfig(level=logging.INFO, datefmt='%Y-%m-%dT%H:%M:%S',
                    format='%(asctime)s [%(levelname)s] %(message)s')


def main():
    data_dir = Path(__file__).parent / "pedp_policy" / "data"
    document = build_schema_document(parse_hexa_file(data_dir / SCHEMA_HEXA_FILENAME))
    write_schema_json(document, data_dir / SCHEMA_JSON_FILENAME)


if __name__ == "__main__":
    main()
