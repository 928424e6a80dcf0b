import logging

from celery import group

logger = logging.getLogger(__name__)


def fan_out(task, arguments: list) -> list:
    """Запустить task(*args) для каждого набора аргументов; результаты в исходном порядке."""
    if not arguments:
        return []
    logger.info(f"🔄 {task.name}: {len(arguments)} независимых задач")
    result = group(task.s(*args) for args in arguments).apply_async()
    return result.get(disable_sync_subtasks=False)
