"""JSON Schema documents for every published payload."""

import jsonschema

PAYLOAD_VERSION = 1

_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_class = {"enum": ["person", "bicycle", "motorbike", "car", "truck", "bus", "other"]}

_envelope = {
    "schema": {"type": "string"},
    "version": {"const": PAYLOAD_VERSION},
    "camera_id": {"type": "string", "minLength": 1},
    "frame_id": {"type": "integer"},
    "t": _number,
    "timestamp": {"type": "string", "pattern": r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{6}Z$"},
}
_envelope_required = ["schema", "version", "camera_id", "frame_id", "t", "timestamp"]

OBJECT_ITEM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["track_id", "class_label", "lat", "lon", "speed", "heading", "t"],
    "properties": {
        "track_id": {"type": "integer"},
        "class_label": _class,
        "lat": {"type": "number", "minimum": -90, "maximum": 90},
        "lon": {"type": "number", "minimum": -180, "maximum": 180},
        "speed": _nonneg,
        "heading": {"type": "number", "minimum": 0, "exclusiveMaximum": 360},
        "t": _number,
    },
}

PAIR_ITEM = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "track_a", "track_b", "class_a", "class_b", "cross_class", "distance_now",
        "t_star", "d_min", "braking_distance", "probability", "alert",
    ],
    "properties": {
        "track_a": {"type": "integer"},
        "track_b": {"type": "integer"},
        "class_a": _class,
        "class_b": _class,
        "cross_class": {"type": "boolean"},
        "distance_now": _nonneg,
        "t_star": _nonneg,
        "d_min": _nonneg,
        "braking_distance": _nonneg,
        "probability": _prob,
        "alert": {"type": "boolean"},
    },
}

ALERT_ITEM = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "track_a", "track_b", "class_a", "class_b", "probability", "distance_now",
        "braking_distance", "t_star", "t", "timestamp",
    ],
    "properties": {
        "track_a": {"type": "integer"},
        "track_b": {"type": "integer"},
        "class_a": _class,
        "class_b": _class,
        "probability": _prob,
        "distance_now": _nonneg,
        "braking_distance": _nonneg,
        "t_star": _nonneg,
        "t": _number,
        "timestamp": _envelope["timestamp"],
    },
}


def _payload_schema(kind, item):
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": f"kerbwatch {kind} payload",
        "type": "object",
        "additionalProperties": False,
        "required": _envelope_required + [kind],
        "properties": {**_envelope, kind: {"type": "array", "items": item}},
    }


SCHEMAS = {
    "objects": _payload_schema("objects", OBJECT_ITEM),
    "pairs": _payload_schema("pairs", PAIR_ITEM),
    "alerts": _payload_schema("alerts", ALERT_ITEM),
}


_VALIDATORS = {}


def validate_payload(kind: str, payload: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``payload`` breaks the ``kind`` schema."""
    v = _VALIDATORS.get(kind)
    if v is None:
        schema = SCHEMAS[kind]
        jsonschema.Draft202012Validator.check_schema(schema)
        v = _VALIDATORS[kind] = jsonschema.Draft202012Validator(schema)
    v.validate(payload)
