from .performance_monitor import get_performance_summary, metrics_collector, operation_timer, performance_monitor
