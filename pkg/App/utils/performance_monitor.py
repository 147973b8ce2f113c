"""
Performance monitoring and structured logging utilities for experiment runs.
Records per-operation timings for training, evaluation and rendering.
"""

import logging
import threading
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, Optional


class StructuredLogger:
    """Structured logger for consistent application logging"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)

    def info(self, message: str, **kwargs):
        self._log(logging.INFO, message, **kwargs)

    def warning(self, message: str, **kwargs):
        self._log(logging.WARNING, message, **kwargs)

    def error(self, message: str, **kwargs):
        self._log(logging.ERROR, message, **kwargs)

    def _log(self, level: int, message: str, **kwargs):
        """Structured fields travel as record attributes for the formatters."""
        self.logger.log(level, message, extra=kwargs)


class MetricsCollector:
    """In-process metrics collector for performance monitoring"""

    def __init__(self):
        self.metrics: Dict[str, Any] = {}
        self._lock = threading.Lock()

    def record_operation(self, operation: str, duration: float, success: bool = True, **metadata):
        """Record operation metrics"""
        key = f"operation.{operation}"

        with self._lock:
            entry = self.metrics.setdefault(key, {
                'count': 0,
                'total_duration': 0.0,
                'success_count': 0,
                'error_count': 0,
                'avg_duration': 0.0,
                'last_executed': None,
            })
            entry['count'] += 1
            entry['total_duration'] += duration
            entry['avg_duration'] = entry['total_duration'] / entry['count']
            entry['last_executed'] = datetime.now(timezone.utc).isoformat()
            if success:
                entry['success_count'] += 1
            else:
                entry['error_count'] += 1

            for k, v in metadata.items():
                self.metrics.setdefault(f"{key}.{k}", v)

    def get_metrics(self) -> Dict[str, Any]:
        with self._lock:
            return {k: (dict(v) if isinstance(v, dict) else v) for k, v in self.metrics.items()}

    def get_operation_metrics(self, operation: str) -> Optional[Dict[str, Any]]:
        return self.get_metrics().get(f"operation.{operation}")

    def reset(self) -> None:
        with self._lock:
            self.metrics.clear()


# Global instances
structured_logger = StructuredLogger('calvin.runtime')
metrics_collector = MetricsCollector()


def performance_monitor(operation_name: str, log_slow_threshold: float = 60.0):
    """
    Decorator to monitor performance and log slow operations with structured logging

    Args:
        operation_name: Name of the operation for metrics
        log_slow_threshold: Threshold in seconds to log as slow operation
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            success = True
            error_msg = None

            try:
                return func(*args, **kwargs)

            except Exception as e:
                success = False
                error_msg = str(e)
                structured_logger.error(
                    f"Operation {operation_name} failed",
                    event='operation_failed',
                    operation=operation_name,
                    error=error_msg,
                    function=func.__name__,
                )
                raise

            finally:
                duration = time.perf_counter() - start_time
                metadata = {'function': func.__name__}
                if error_msg:
                    metadata['error'] = error_msg
                metrics_collector.record_operation(operation_name, duration, success, **metadata)

                if duration > log_slow_threshold:
                    structured_logger.warning(
                        f"SLOW OPERATION: {operation_name}",
                        event='operation_slow',
                        operation=operation_name,
                        duration_seconds=round(duration, 3),
                        function=func.__name__,
                        success=success,
                    )
                else:
                    structured_logger.info(
                        f"Operation completed: {operation_name}",
                        event='operation_completed',
                        operation=operation_name,
                        duration_seconds=round(duration, 3),
                        function=func.__name__,
                        success=success,
                    )

        return wrapper
    return decorator


@contextmanager
def operation_timer(operation_name: str):
    """
    Context manager timing a block as one operation

    Usage:
        with operation_timer("evaluation.seed_0"):
            run_rollouts(...)
    """
    start_time = time.perf_counter()
    success = True
    try:
        yield
    except Exception:
        success = False
        raise
    finally:
        metrics_collector.record_operation(operation_name, time.perf_counter() - start_time, success)


def get_performance_summary() -> Dict[str, Any]:
    """Per-operation counts and durations collected so far"""
    operations = {}
    for key, data in metrics_collector.get_metrics().items():
        if key.startswith('operation.') and isinstance(data, dict):
            operations[key[len('operation.'):]] = {
                'count': data['count'],
                'total_duration': round(data['total_duration'], 6),
                'avg_duration': round(data['avg_duration'], 6),
                'error_count': data['error_count'],
            }
    return {
        'timestamp': datetime.now(timezone.utc).isoformat(),
        'total_operations': sum(op['count'] for op in operations.values()),
        'operations': dict(sorted(operations.items())),
    }
