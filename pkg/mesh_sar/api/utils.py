import logging
import os
from datetime import datetime

from tqdm import tqdm

from mesh_sar.exceptions import MissingPrerequisiteError, ValidationError

DEFAULT_LOG_DIR = "logs"

_progress_bars: dict[str, tqdm] = {}


def generate_logger(log_name: str, log_dir: str = DEFAULT_LOG_DIR) -> dict[str, logging.Logger | str]:
    """Generates and configures a logger with file output.

    Creates a logger that writes to a timestamped log file in a subdirectory
    ``<log_dir>/<log_name>s/``.

    Args:
        log_name (str): Base name to use for logger and log file/directory
        log_dir (str): Root directory for log files

    Returns:
        dict: Dictionary containing:
            - logger (logging.Logger): Configured logger instance
            - log_file (str): Full path to the generated log file

    Example:
        >>> logger_dict = generate_logger("train_vae")
        >>> logger = logger_dict["logger"]
        >>> logger.info("Starting training")  # Writes to log file
    """
    directory: str = os.path.join(log_dir, f"{log_name}s")
    os.makedirs(directory, exist_ok=True)

    timestamp: str = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
    log_file: str = os.path.join(directory, f"{log_name}_{timestamp}.log")

    logger: logging.Logger = logging.getLogger(f"mesh_sar.{log_name}.{timestamp}")
    logger.setLevel(logging.INFO)
    handler = logging.FileHandler(log_file)
    handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
    logger.addHandler(handler)
    return {"logger": logger, "log_file": log_file}


def close_logger(logger: logging.Logger) -> None:
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)


def get_file_info(file_path: str, logger: logging.Logger) -> dict[str, str]:
    """Validates an artifact path and splits it into its parts.

    Args:
        file_path: Path of an existing artifact
        logger: Logger instance for tracking operations

    Returns:
        dict: Dictionary containing file information:
            - path: Absolute path to the file
            - name: File name without extension
            - extension: File extension
            - directory: Containing directory

    Raises:
        MissingPrerequisiteError: If file not found
    """
    if not os.path.exists(file_path):
        msg = f"File not found: {file_path}"
        logger.error(msg)
        raise MissingPrerequisiteError(msg)

    path = os.path.abspath(file_path)
    name, extension = os.path.splitext(os.path.basename(path))
    return {"path": path, "name": name, "extension": extension, "directory": os.path.dirname(path)}


def check_file_type(extension: str, file_type: str) -> None:
    """Validates file extension against allowed types.

    Args:
        extension: File extension including dot (e.g. '.json')
        file_type: Type of file to validate against ('dataset', 'metrics', ...)

    Raises:
        ValidationError: If extension not allowed for file_type
    """
    ALLOWED_EXTENSIONS = {
        "dataset": {".json"},
        "config": {".json"},
        "metrics": {".csv"},
        "plot": {".svg"},
    }

    if file_type in ALLOWED_EXTENSIONS:
        allowed = ALLOWED_EXTENSIONS[file_type]
        if extension.lower() not in allowed:
            raise ValidationError(f"Invalid file format. Allowed formats: {', '.join(sorted(allowed))}")
    else:
        raise ValidationError(
            f"Invalid file type. Allowed types: {', '.join(ALLOWED_EXTENSIONS.keys())}"
        )


def show_progress(curr_count: int, max_count: int, title: str, desc: str):
    bar = _progress_bars.get(title)
    if bar is None or curr_count <= bar.n:
        if bar is not None:
            bar.close()
        bar = tqdm(total=max_count, desc=title, leave=False, disable=None)
        _progress_bars[title] = bar
    bar.set_postfix_str(desc, refresh=False)
    bar.update(curr_count - bar.n)
    if curr_count >= max_count:
        bar.close()
        del _progress_bars[title]
