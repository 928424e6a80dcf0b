import os
from dotenv import load_dotenv

load_dotenv()

DEBUG = os.getenv("DEBUG", "False") == "True"
LOG_LEVEL = os.getenv("ELLIKORN_LOG_LEVEL", "INFO")

# Celery: по умолчанию всё выполняется в процессе (детерминированные отчёты)
THREADS = max(1, int(os.getenv("ELLIKORN_THREADS", 1)))
EAGER = os.getenv("ELLIKORN_EAGER", "True") == "True"
REDIS_URL = os.getenv("ELLIKORN_REDIS_URL", "redis://127.0.0.1:6379/0")

# Численные допуски и бюджеты
MAX_DEGREE = int(os.getenv("ELLIKORN_MAX_DEGREE", 20))
WITNESS_TOL = float(os.getenv("ELLIKORN_WITNESS_TOL", 1e-8))
ELLIPTIC_TOL = float(os.getenv("ELLIKORN_ELLIPTIC_TOL", 1e-6))
WITNESS_RESTARTS = int(os.getenv("ELLIKORN_WITNESS_RESTARTS", 24))
SPHERE_SAMPLES = int(os.getenv("ELLIKORN_SPHERE_SAMPLES", 512))
DENSE_LIMIT = int(os.getenv("ELLIKORN_DENSE_LIMIT", 4096))

TOOL_VERSION = "0.3.0"
