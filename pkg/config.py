import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


@dataclass
class Config:
    LOG_LEVEL: str = os.getenv('SPECTF_LOG_LEVEL', 'INFO').upper()
    WORKERS: int = int(os.getenv('SPECTF_WORKERS', 1))
    CHUNK_PIXELS: int = int(os.getenv('SPECTF_CHUNK_PIXELS', 256))
    MICRO_BATCH: int = int(os.getenv('SPECTF_MICRO_BATCH', 16))
    DEFAULT_SEED: int = int(os.getenv('SPECTF_SEED', 0))


def get_config():
    return Config()
