"""Deployment plumbing: document streams, watcher, sinks and model artifacts."""
from .documents import (DOC_TYPES, Document, DocumentAfterStopError, DocumentProtocolError,
                        DocumentStream, DuplicateSeqError, DuplicateStartError,
                        EventBeforeStartError, MalformedDocumentError, MeasurementRecord,
                        OutOfOrderSeqError, RunComplete, StopBeforeStartError,
                        StreamWarning, UnknownDocTypeError, group_by_run,
                        read_document_stream)
from .persist import (ARTIFACT_SCHEMA_VERSION, ArtifactError, ArtifactIntegrityError,
                      ArtifactVersionError, ModelArtifact, load_model, loads_model,
                      save_model)
from .sinks import (ArchiveSink, DeliveryResult, MemorySink, RetryPolicy, Sink,
                    WebhookSink, slack_body, webhook_notify)
from .watch import (QuarantineEntry, WatchConfig, Watcher, WatchError, WatchStats,
                    parse_file, parse_two_column, watch)

__all__ = [
    "ArchiveSink", "ARTIFACT_SCHEMA_VERSION", "ArtifactError", "ArtifactIntegrityError",
    "ArtifactVersionError", "DeliveryResult", "DOC_TYPES", "Document",
    "DocumentAfterStopError", "DocumentProtocolError", "DocumentStream",
    "DuplicateSeqError", "DuplicateStartError", "EventBeforeStartError", "group_by_run",
    "load_model", "loads_model", "MalformedDocumentError", "MeasurementRecord",
    "MemorySink", "ModelArtifact", "OutOfOrderSeqError", "parse_file",
    "parse_two_column", "QuarantineEntry", "read_document_stream", "RetryPolicy",
    "RunComplete", "save_model", "Sink", "slack_body", "StopBeforeStartError",
    "StreamWarning", "UnknownDocTypeError", "watch", "WatchConfig", "Watcher",
    "WatchError", "WatchStats", "webhook_notify", "WebhookSink",
]
