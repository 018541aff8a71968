"""
Load and validate the toy multi-domain world: domains, slots, value sets and a
small entity database per domain.

The human-edited definition lives in ``data/toy_schema.hexa`` (one block per
domain, see schemaparse.py); the JSON document derived from it is what the
package reads.
"""

import copy
import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import pedp_policy
from pedp_policy.actions import ActionVocab, format_action, AtomicAction
from pedp_policy.corpus import CorpusSchema
from pedp_policy.digests import json_digest
from pedp_policy.state_layout import BELIEF, ENTITIES, SYSTEM_ACTION, USER_ACTION, StateLayout

SCHEMA_JSON_FILENAME = "toy_schema.json"
SCHEMA_HEXA_FILENAME = "toy_schema.hexa"

GENERAL = "general"
INFORM = "inform"
REQUEST = "request"
RECOMMEND = "recommend"
BOOK = "book"
NOOFFER = "nooffer"
NAME = "name"
NONE = "none"
REF = "ref"
BYE = "bye"
REQMORE = "reqmore"
GREET = "greet"
DONTCARE = "dontcare"

# match-count buckets per domain: 0, 1, 2, 3, 4, 5 or more
MATCH_BUCKETS = 6
# per domain: offered, booked, booking requested
DOMAIN_FLAGS = ("offered", "booked", "book_requested")

VALID_BLOCK_KEYS = {"domain", "informable", "requestable", "entities", "seed"}
STREETS = ("mill road", "hills road", "regent street", "castle hill", "bridge street", "station road")


class SchemaError(ValueError):
    """Raised when a domain schema is malformed or inconsistent."""
    pass


@dataclass(frozen=True)
class DomainSpec:
    name: str
    informable: Tuple[Tuple[str, Tuple[str, ...]], ...]
    requestable: Tuple[str, ...]
    entities: Tuple[Dict[str, str], ...]

    @property
    def informable_slots(self) -> List[str]:
        return [slot for slot, _ in self.informable]

    @property
    def slots(self) -> List[str]:
        return self.informable_slots + list(self.requestable)

    def values(self, slot: str) -> Tuple[str, ...]:
        return dict(self.informable)[slot]

    def matches(self, constraints: Dict[str, str]) -> List[Dict[str, str]]:
        """Entities consistent with the constraints, in database order; dontcare matches anything."""
        return [entity for entity in self.entities
                if all(value == DONTCARE or entity[slot] == value for slot, value in constraints.items())]


class DomainSchema:
    """
    The toy world plus everything derived from it: both action inventories,
    the state layout and the corpus sidecar.

    :param domains: domain specifications in declaration order
    """

    def __init__(self, domains: Sequence[DomainSpec]):
        self.domains: Tuple[DomainSpec, ...] = tuple(domains)
        self._by_name = {d.name: d for d in self.domains}
        self.vocab = ActionVocab(self.system_actions())
        self.user_vocab = ActionVocab(self.user_actions())

    def domain(self, name: str) -> DomainSpec:
        try:
            return self._by_name[name]
        except KeyError as err:
            raise SchemaError(f'Unknown domain "{name}"') from err

    @property
    def domain_names(self) -> List[str]:
        return [d.name for d in self.domains]

    def system_actions(self) -> List[str]:
        texts = []
        for d in self.domains:
            for slot in d.slots:
                texts.append(format_action(AtomicAction(d.name, INFORM, slot)))
                texts.append(format_action(AtomicAction(d.name, REQUEST, slot)))
            texts.append(format_action(AtomicAction(d.name, RECOMMEND, NAME)))
            texts.append(format_action(AtomicAction(d.name, BOOK, REF)))
            texts.append(format_action(AtomicAction(d.name, NOOFFER, NONE)))
        for intent in (BYE, REQMORE, GREET):
            texts.append(format_action(AtomicAction(GENERAL, intent, NONE)))
        return texts

    def user_actions(self) -> List[str]:
        texts = []
        for d in self.domains:
            texts.extend(format_action(AtomicAction(d.name, INFORM, slot)) for slot in d.informable_slots)
            texts.extend(format_action(AtomicAction(d.name, REQUEST, slot)) for slot in d.requestable)
            texts.append(format_action(AtomicAction(d.name, BOOK, NONE)))
        texts.append(format_action(AtomicAction(GENERAL, BYE, NONE)))
        return texts

    def belief_width(self) -> int:
        per_domain = sum(len(d.informable) + 2 * len(d.requestable) + len(DOMAIN_FLAGS) for d in self.domains)
        return per_domain + 1

    def layout(self) -> StateLayout:
        return StateLayout.from_spans([
            (ENTITIES, MATCH_BUCKETS * len(self.domains)),
            (USER_ACTION, len(self.user_vocab)),
            (SYSTEM_ACTION, len(self.vocab)),
            (BELIEF, self.belief_width()),
        ])

    def corpus_schema(self) -> CorpusSchema:
        return CorpusSchema(self.layout(), self.vocab, tuple(self.user_vocab.texts()))

    def to_dict(self) -> Dict[str, Any]:
        return {"domains": [{
            "name": d.name,
            "informable": {slot: list(values) for slot, values in d.informable},
            "requestable": list(d.requestable),
            "entities": [dict(e) for e in d.entities],
        } for d in self.domains]}

    @property
    def digest(self) -> str:
        return json_digest(self.to_dict())


def validate_schema(data: Dict[str, Any]) -> None:
    if not isinstance(data, dict) or not isinstance(data.get("domains"), list) or not data["domains"]:
        raise SchemaError('Schema must declare a nonempty "domains" list')
    seen = set()
    for d in data["domains"]:
        for key in ("name", "informable", "requestable", "entities"):
            if key not in d:
                raise SchemaError(f'Missing "{key}" in domain definition: {d.get("name", d)}')
        name = d["name"]
        if name in seen or name == GENERAL or "-" in name:
            raise SchemaError(f'Invalid or duplicate domain name "{name}"')
        seen.add(name)
        informable = d["informable"]
        if not informable or not d["requestable"]:
            raise SchemaError(f'Domain "{name}" needs informable and requestable slots')
        for slot, values in informable.items():
            if not values or DONTCARE in values:
                raise SchemaError(f'Slot "{slot}" in "{name}" has an invalid value set {values}')
        slots = list(informable) + list(d["requestable"])
        if len(set(slots)) != len(slots) or any("-" in s for s in slots):
            raise SchemaError(f'Domain "{name}" has duplicate or malformed slot names')
        if not d["entities"]:
            raise SchemaError(f'Domain "{name}" has an empty entity database')
        for entity in d["entities"]:
            for slot, values in informable.items():
                if entity.get(slot) not in values:
                    raise SchemaError(f'Entity {entity.get(NAME)} in "{name}" has invalid {slot}={entity.get(slot)}')
            for slot in d["requestable"]:
                if not entity.get(slot):
                    raise SchemaError(f'Entity {entity.get(NAME)} in "{name}" has no value for "{slot}"')


def schema_from_dict(data: Dict[str, Any]) -> DomainSchema:
    validate_schema(data)
    domains = [DomainSpec(
        name=d["name"],
        informable=tuple((slot, tuple(values)) for slot, values in d["informable"].items()),
        requestable=tuple(d["requestable"]),
        entities=tuple(dict(e) for e in d["entities"]),
    ) for d in data["domains"]]
    return DomainSchema(domains)


def default_schema_path() -> Path:
    return Path(pedp_policy.__path__[0]) / "data" / SCHEMA_JSON_FILENAME


def default_hexa_path() -> Path:
    return Path(pedp_policy.__path__[0]) / "data" / SCHEMA_HEXA_FILENAME


@lru_cache(maxsize=1)
def _packaged_document() -> Dict[str, Any]:
    logging.info(f"No {SCHEMA_JSON_FILENAME} in the package, building the toy world from {SCHEMA_HEXA_FILENAME}")
    return build_schema_document(parse_hexa_file(default_hexa_path()))


def load_schema(path: Optional[Path] = None) -> DomainSchema:
    """
    Load the JSON schema. Without a path the packaged JSON is used, or, when it
    has not been generated, the .hexa source parsed once per process.
    """
    if path is None:
        path = default_schema_path()
        if not path.exists():
            return schema_from_dict(copy.deepcopy(_packaged_document()))
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as err:
        logging.error(f"Unable to open {path}: {err}")
        raise SchemaError(f"Could not load domain schema from {path}") from err
    except json.JSONDecodeError as err:
        raise SchemaError(f"Domain schema {path} is not valid JSON: {err}") from err
    return schema_from_dict(data)


def is_new_block(line: str) -> bool:
    return re.match(r'^::::::$', line.strip()) is not None


def is_key(line: str) -> bool:
    return re.match(r'^:::[^:]', line.strip()) is not None


def is_comment(line: str) -> bool:
    return line.strip().startswith("#")


def hexakey(line: str) -> str:
    return line.strip()[3:].strip()


def parse_hexa_file(path: Path) -> List[Dict[str, List[str]]]:
    """
    Parse a hexa-formatted file into a list of blocks.

    A ``::::::`` line opens a block, ``:::key`` opens a key and every following
    line until the next key is one of its values.
    """
    logging.info(f"Parsing {path}")
    blocks = []
    block: Dict[str, List[str]] = {}
    key = None
    values: List[str] = []

    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or is_comment(line):
                continue
            elif is_new_block(line):
                if key:
                    block[key] = values
                if block:
                    blocks.append(block)
                block = {}
                key = None
                values = []
            elif is_key(line):
                if key:
                    block[key] = values
                key = hexakey(line)
                values = []
            else:
                if key is None:
                    raise SchemaError(f"Missing key before value on line {lineno}")
                values.append(line)

    if key:
        block[key] = values
    if block:
        blocks.append(block)
    return blocks


def _single(block: Dict[str, List[str]], key: str) -> str:
    if len(block.get(key, [])) != 1:
        raise SchemaError(f'Expected exactly one "{key}" value in block: {block}')
    return block[key][0]


def generate_entities(domain: str, informable: Dict[str, List[str]], requestable: Sequence[str],
                      count: int, seed: int) -> List[Dict[str, str]]:
    """A deterministic entity database for one domain."""
    rng = np.random.default_rng(seed)
    entities = []
    for i in range(count):
        entity = {NAME: f"{domain} {i:02d}"}
        for slot, values in informable.items():
            entity[slot] = values[int(rng.integers(len(values)))]
        generated = {
            "address": f"{int(rng.integers(1, 200))} {STREETS[int(rng.integers(len(STREETS)))]}",
            "phone": f"01223{int(rng.integers(100000, 1000000))}",
            "postcode": f"cb{int(rng.integers(1, 6))}{int(rng.integers(1, 10))}{chr(97 + int(rng.integers(26)))}",
        }
        for slot in requestable:
            entity[slot] = generated.get(slot, f"{slot} {i:02d}")
        entities.append(entity)
    return entities


def build_schema_document(blocks: List[Dict[str, List[str]]]) -> Dict[str, Any]:
    """Turn parsed .hexa domain blocks into the validated JSON schema document."""
    domains = []
    for block in blocks:
        unknown = set(block) - VALID_BLOCK_KEYS
        if unknown:
            raise SchemaError(f"Invalid attributes {sorted(unknown)} in domain block: {block}")
        name = _single(block, "domain")
        informable = {}
        for line in block.get("informable", []):
            slot, _, values = line.partition("=")
            informable[slot.strip()] = [v.strip() for v in values.split("|") if v.strip()]
        requestable = list(block.get("requestable", []))
        try:
            count = int(_single(block, "entities"))
            seed = int(_single(block, "seed"))
        except ValueError as err:
            raise SchemaError(f'Non-integer entity count or seed in domain "{name}"') from err
        domains.append({
            "name": name,
            "informable": informable,
            "requestable": requestable,
            "entities": generate_entities(name, informable, requestable, count, seed),
        })
    document = {"domains": domains}
    validate_schema(document)
    return document


def write_schema_json(document: Dict[str, Any], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
    logging.info(f"Wrote {len(document['domains'])} domains to {path}")
