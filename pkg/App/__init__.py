from .config import build_train_config, load_config
from .main import create_runtime
