"""Detection ingestion, configuration loading and telemetry publication."""

from .config import PipelineConfig, config_from_dict, load_config, save_config
from .schemas import SCHEMAS, validate_payload
from .stream import (
    CLASS_LABELS,
    DetectionEvent,
    DetectionStreamReader,
    FrameBatch,
    ObjectMetadata,
    filter_by_confidence,
    format_detection,
    parse_detection,
    read_detection_stream,
    stream_header,
    write_detection_stream,
)
from .telemetry import (
    BUFFER_LIMIT,
    CsvSink,
    DeliveryReport,
    InMemorySink,
    JsonlSink,
    Message,
    MqttSink,
    TelemetryPublisher,
    publish_metadata,
    topic_for,
)

__all__ = [
    "BUFFER_LIMIT",
    "CLASS_LABELS",
    "CsvSink",
    "DeliveryReport",
    "DetectionEvent",
    "DetectionStreamReader",
    "FrameBatch",
    "InMemorySink",
    "JsonlSink",
    "Message",
    "MqttSink",
    "ObjectMetadata",
    "PipelineConfig",
    "SCHEMAS",
    "TelemetryPublisher",
    "config_from_dict",
    "filter_by_confidence",
    "format_detection",
    "load_config",
    "parse_detection",
    "publish_metadata",
    "read_detection_stream",
    "save_config",
    "stream_header",
    "topic_for",
    "validate_payload",
    "write_detection_stream",
]
