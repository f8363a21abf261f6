"""Dataset manifests, the annotation cache, and the model-service clients.

Manifest format: UTF-8 JSON lines, one record per line, with these fields
(names are normative)::

    record_id, image_path, image_height, image_width, caption,
    scene_graph_ref, masks_ref, itm_score

The three refs/score fields are optional and filled in by annotation.
Refs are slash-separated paths relative to the cache directory.

Service wire protocol: HTTP POST to ``/parse``, ``/segment``, or ``/itm``
with body ``{"task": ..., "payload": ...}`` and response
``{"ok": true, "result": ...}`` or ``{"ok": false, "error": "..."}``.
Payloads:

- parse:   ``{"caption": str}`` -> result is text containing one canonical
  graph document (the document may be wrapped in prose)
- segment: ``{"image": str, "height": int, "width": int,
  "objects": [{"id": str, "label": str}, ...]}`` -> result
  ``{"masks": {id: {height, width, counts}}}``; ungrounded objects are
  simply absent
- itm:     ``{"image": str, "caption": str}`` -> result ``{"score": float}``

Auth, when configured, is a bearer token read from a named environment
variable. Annotation artifacts are content-addressed under the cache
directory (graphs keyed by caption hash, masks by image/graph content, itm
scores by image and caption), which makes reruns idempotent: anything
already cached is never requested again.
"""

from __future__ import annotations

import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import requests

from capdet.errors import (
    CapdetError,
    DimensionMismatchError,
    DuplicateIdError,
    MalformedLineError,
    NoGraphInResponseError,
    TransportError,
)
from capdet.masks import RleMask, read_mask_document, validate_rle, write_mask_document
from capdet.metrics import ScoringInput
from capdet.scene_graph import (
    SceneGraph,
    graph_from_document,
    parse_scene_graph,
    serialize_scene_graph,
)
from capdet.util import atomic_write_bytes, json_compact, sha256_hex

logger = logging.getLogger(__name__)

PARSE_PATH = "/parse"
SEGMENT_PATH = "/segment"
ITM_PATH = "/itm"


@dataclass(frozen=True)
class DatasetRecord:
    """One image-caption pair plus references to its annotations."""

    record_id: str
    image_path: str
    image_height: int
    image_width: int
    caption: str
    scene_graph_ref: str | None = None
    masks_ref: str | None = None
    itm_score: float | None = None


_RECORD_FIELDS = (
    "record_id",
    "image_path",
    "image_height",
    "image_width",
    "caption",
    "scene_graph_ref",
    "masks_ref",
    "itm_score",
)


def record_to_json(record: DatasetRecord) -> str:
    obj = {}
    for field in _RECORD_FIELDS:
        value = getattr(record, field)
        if value is None:
            continue
        obj[field] = value
    return json_compact(obj)


def _record_from_obj(obj: dict, line_no: int) -> DatasetRecord:
    try:
        record = DatasetRecord(
            record_id=obj["record_id"],
            image_path=obj["image_path"],
            image_height=obj["image_height"],
            image_width=obj["image_width"],
            caption=obj["caption"],
            scene_graph_ref=obj.get("scene_graph_ref"),
            masks_ref=obj.get("masks_ref"),
            itm_score=obj.get("itm_score"),
        )
    except KeyError as e:
        raise MalformedLineError(
            f"line {line_no}: missing field {e.args[0]!r}", line_no
        ) from None
    if not isinstance(record.record_id, str) or not record.record_id:
        raise MalformedLineError(f"line {line_no}: record_id must be a nonempty string", line_no)
    if not isinstance(record.caption, str):
        raise MalformedLineError(f"line {line_no}: caption must be a string", line_no)
    for dim in ("image_height", "image_width"):
        v = obj[dim]
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise MalformedLineError(
                f"line {line_no}: {dim} must be a positive integer", line_no
            )
    return record


def parse_manifest(data: bytes | str, strict: bool = True) -> list[DatasetRecord]:
    """Parse manifest lines. In lenient mode malformed lines are skipped with
    a logged warning; duplicate ids are always an error."""
    if isinstance(data, (bytes, bytearray)):
        data = bytes(data).decode("utf-8")
    records: list[DatasetRecord] = []
    first_line: dict[str, int] = {}
    for line_no, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedLineError(f"line {line_no}: invalid JSON: {e}", line_no) from e
            if not isinstance(obj, dict):
                raise MalformedLineError(f"line {line_no}: record must be an object", line_no)
            record = _record_from_obj(obj, line_no)
        except MalformedLineError:
            if strict:
                raise
            logger.warning("skipping malformed manifest line %d", line_no)
            continue
        if record.record_id in first_line:
            raise DuplicateIdError(
                f"record_id {record.record_id!r} appears on lines "
                f"{first_line[record.record_id]} and {line_no}"
            )
        first_line[record.record_id] = line_no
        records.append(record)
    return records


def read_manifest(path: str | Path, strict: bool = True) -> list[DatasetRecord]:
    return parse_manifest(Path(path).read_bytes(), strict=strict)


def dumps_manifest(records: Iterable[DatasetRecord]) -> bytes:
    lines = [record_to_json(r) for r in records]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def write_manifest(records: Iterable[DatasetRecord], path: str | Path) -> None:
    atomic_write_bytes(path, dumps_manifest(records))


@dataclass(frozen=True)
class ServiceEndpointConfig:
    base_url: str
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4
    auth_token_env: str | None = None
    backoff_base: float = 0.25

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be at least 1")


class ServiceClient:
    """Shared HTTP client for the parser, segmentation, and ITM services.

    Retries transport faults and 5xx responses with exponential backoff and
    jitter; 4xx responses and service-level errors are not retried.
    """

    def __init__(self, config: ServiceEndpointConfig):
        self.config = config
        self._session = requests.Session()
        self._itm_cache: dict[str, float] = {}

    def _headers(self) -> dict[str, str]:
        headers = {}
        if self.config.auth_token_env:
            token = os.environ.get(self.config.auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def post(self, path: str, task: str, payload: dict):
        url = self.config.base_url.rstrip("/") + path
        body = {"task": task, "payload": payload}
        headers = self._headers()
        last_error = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = self.config.backoff_base * (2 ** (attempt - 1))
                time.sleep(delay + random.uniform(0, self.config.backoff_base))
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=self.config.timeout
                )
            except requests.RequestException as e:
                last_error = f"{type(e).__name__}: {e}"
                continue
            if resp.status_code >= 500:
                last_error = f"server returned {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise TransportError(f"{url} returned {resp.status_code}")
            try:
                envelope = resp.json()
            except ValueError as e:
                raise TransportError(f"{url} returned a non-JSON body: {e}") from e
            if not isinstance(envelope, dict) or "ok" not in envelope:
                raise TransportError(f"{url} returned a malformed envelope")
            if not envelope["ok"]:
                raise TransportError(
                    f"{url} reported an error: {envelope.get('error', 'unknown')}"
                )
            return envelope.get("result")
        raise TransportError(
            f"{url} failed after {self.config.max_retries + 1} attempts: {last_error}"
        )


def extract_graph_document(text: str) -> SceneGraph:
    """Find and validate the first canonical graph document embedded in free
    text (the parser service tends to wrap its output in prose)."""
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text, idx)
        except ValueError:
            obj = None
        if (
            isinstance(obj, dict)
            and {"objects", "attributes", "relations"} <= obj.keys()
        ):
            return graph_from_document(obj)
        idx = text.find("{", idx + 1)
    raise NoGraphInResponseError("no canonical graph document found in response text")


def request_scene_graph(client: ServiceClient, caption: str) -> SceneGraph:
    """Ask the parser service for the caption's scene graph."""
    result = client.post(PARSE_PATH, "parse", {"caption": caption})
    if isinstance(result, dict):
        return graph_from_document(result)
    if not isinstance(result, str):
        raise NoGraphInResponseError(
            f"parse result must be text or a graph document, got {type(result).__name__}"
        )
    return extract_graph_document(result)


@dataclass(frozen=True)
class MaskResponse:
    masks: dict[str, RleMask]
    missing: tuple[str, ...]


def request_masks(
    client: ServiceClient,
    image_ref: str,
    image_height: int,
    image_width: int,
    objects: Sequence[tuple[str, str]],
) -> MaskResponse:
    """Ask the segmentation service to ground (id, label) pairs.

    Ungrounded objects come back in ``missing``. An empty object list
    short-circuits without any request.
    """
    if not objects:
        return MaskResponse(masks={}, missing=())
    payload = {
        "image": image_ref,
        "height": image_height,
        "width": image_width,
        "objects": [{"id": oid, "label": label} for oid, label in objects],
    }
    result = client.post(SEGMENT_PATH, "segment", payload)
    if not isinstance(result, dict) or not isinstance(result.get("masks"), dict):
        raise TransportError("segment result is missing the 'masks' mapping")
    requested = [oid for oid, _ in objects]
    masks: dict[str, RleMask] = {}
    for oid, entry in result["masks"].items():
        if oid not in requested:
            logger.warning("segment service returned unrequested object %r", oid)
            continue
        try:
            mask = RleMask(
                height=entry["height"], width=entry["width"], counts=tuple(entry["counts"])
            )
            validate_rle(mask)
        except (KeyError, TypeError) as e:
            raise TransportError(f"segment mask for {oid!r} is malformed: {e}") from e
        if (mask.height, mask.width) != (image_height, image_width):
            raise DimensionMismatchError(
                f"mask for object {oid!r} is {mask.height}x{mask.width}, "
                f"image is {image_height}x{image_width}"
            )
        masks[oid] = mask
    missing = tuple(oid for oid in requested if oid not in masks)
    return MaskResponse(masks=masks, missing=missing)


def itm_cache_key(image_ref: str, caption: str) -> str:
    return sha256_hex("itm", image_ref, caption)


def request_itm(client: ServiceClient, image_ref: str, caption: str) -> float:
    """Image-text matching score; cached per (image ref, caption hash)."""
    key = itm_cache_key(image_ref, caption)
    if key in client._itm_cache:
        return client._itm_cache[key]
    result = client.post(ITM_PATH, "itm", {"image": image_ref, "caption": caption})
    if not isinstance(result, dict) or not isinstance(result.get("score"), (int, float)):
        raise TransportError("itm result is missing a numeric 'score'")
    score = float(result["score"])
    client._itm_cache[key] = score
    return score


# --- annotation cache layout ---


def graph_cache_ref(caption: str) -> str:
    return f"graphs/{sha256_hex('graph', caption)}.json"


def masks_cache_ref(image_ref: str, image_height: int, image_width: int, graph_bytes: bytes) -> str:
    key = sha256_hex("masks", image_ref, str(image_height), str(image_width), graph_bytes)
    return f"masks/{key}.json"


def itm_cache_ref(image_ref: str, caption: str) -> str:
    return f"itm/{itm_cache_key(image_ref, caption)}.json"


@dataclass(frozen=True)
class AnnotateFailure:
    record_id: str
    error: str


@dataclass(frozen=True)
class AnnotateOutcome:
    records: tuple[DatasetRecord, ...]
    failures: tuple[AnnotateFailure, ...]
    requests_made: int


def _annotate_one(
    record: DatasetRecord, client: ServiceClient | None, cache_dir: Path
) -> tuple[DatasetRecord, int]:
    calls = 0

    # scene graph
    if record.scene_graph_ref is not None:
        graph_path = cache_dir / record.scene_graph_ref
        if not graph_path.is_file():
            raise CapdetError(
                f"scene_graph_ref {record.scene_graph_ref!r} does not exist under the cache"
            )
    else:
        ref = graph_cache_ref(record.caption)
        graph_path = cache_dir / ref
        if not graph_path.is_file():
            if client is None:
                raise CapdetError("missing scene graph and no endpoint configured")
            graph = request_scene_graph(client, record.caption)
            calls += 1
            atomic_write_bytes(graph_path, serialize_scene_graph(graph) + b"\n")
        record = replace(record, scene_graph_ref=ref)
    graph_bytes = graph_path.read_bytes()

    # masks
    if record.masks_ref is not None:
        if not (cache_dir / record.masks_ref).is_file():
            raise CapdetError(
                f"masks_ref {record.masks_ref!r} does not exist under the cache"
            )
    else:
        ref = masks_cache_ref(
            record.image_path, record.image_height, record.image_width, graph_bytes
        )
        masks_path = cache_dir / ref
        if not masks_path.is_file():
            if client is None:
                raise CapdetError("missing masks and no endpoint configured")
            graph = parse_scene_graph(graph_bytes)
            response = request_masks(
                client,
                record.image_path,
                record.image_height,
                record.image_width,
                [(o.id, o.label) for o in graph.objects],
            )
            calls += 1
            if response.missing:
                logger.info(
                    "record %s: %d object(s) not grounded: %s",
                    record.record_id,
                    len(response.missing),
                    ", ".join(response.missing),
                )
            atomic_write_bytes(masks_path, write_mask_document(response.masks) + b"\n")
        record = replace(record, masks_ref=ref)

    # itm score
    if record.itm_score is None:
        score_path = cache_dir / itm_cache_ref(record.image_path, record.caption)
        if score_path.is_file():
            score = json.loads(score_path.read_bytes())["score"]
        else:
            if client is None:
                raise CapdetError("missing itm score and no endpoint configured")
            score = request_itm(client, record.image_path, record.caption)
            calls += 1
            atomic_write_bytes(score_path, json_compact({"score": score}).encode() + b"\n")
        record = replace(record, itm_score=float(score))

    return record, calls


def annotate_dataset(
    records: Sequence[DatasetRecord],
    client: ServiceClient | None,
    cache_dir: str | Path,
    jobs: int = 1,
) -> AnnotateOutcome:
    """Fill in missing annotations, reusing the content-addressed cache.

    Pass ``client=None`` for offline mode, which succeeds exactly when every
    annotation already exists. Partial failures never abort the batch; they
    are returned alongside the untouched original records.
    """
    cache_dir = Path(cache_dir)
    if client is not None:
        jobs = min(jobs, client.config.max_concurrency)
    jobs = max(jobs, 1)

    def work(record: DatasetRecord):
        try:
            return _annotate_one(record, client, cache_dir)
        except CapdetError as e:
            return e

    if jobs == 1:
        results = [work(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, records))

    out_records: list[DatasetRecord] = []
    failures: list[AnnotateFailure] = []
    total_calls = 0
    for record, result in zip(records, results):
        if isinstance(result, CapdetError):
            failures.append(AnnotateFailure(record_id=record.record_id, error=str(result)))
            out_records.append(record)
        else:
            annotated, calls = result
            total_calls += calls
            out_records.append(annotated)
    return AnnotateOutcome(
        records=tuple(out_records), failures=tuple(failures), requests_made=total_calls
    )


def load_scoring_input(record: DatasetRecord, cache_dir: str | Path) -> ScoringInput:
    """Join a record with its cached annotations for scoring."""
    cache_dir = Path(cache_dir)
    if record.scene_graph_ref is None:
        raise CapdetError(f"record {record.record_id!r} has no scene_graph_ref")
    if record.masks_ref is None:
        raise CapdetError(f"record {record.record_id!r} has no masks_ref")
    try:
        graph_bytes = (cache_dir / record.scene_graph_ref).read_bytes()
        masks_bytes = (cache_dir / record.masks_ref).read_bytes()
    except OSError as e:
        raise CapdetError(f"record {record.record_id!r}: cannot read annotation: {e}") from e
    graph = parse_scene_graph(graph_bytes)
    masks = read_mask_document(masks_bytes)
    return ScoringInput(
        record_id=record.record_id,
        image_height=record.image_height,
        image_width=record.image_width,
        caption=record.caption,
        graph=graph,
        masks=masks,
    )
