"""
Django settings for the handcrop project.

handcrop has no web surface: Django provides the management-command CLI,
configuration, logging, templates (SVG figures) and the run-history database.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env file
load_dotenv(BASE_DIR / '.env')


# No requests are ever served; the key only satisfies Django's startup checks.
SECRET_KEY = os.environ.get("SECRET_KEY", "handcrop-cli-only-not-secret")

DEBUG = os.environ.get("DEBUG", "False") == "True"

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "handcrop.core.apps.CoreConfig",
]

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {},
    },
]


# Database
# https://docs.djangoproject.com/en/6.0/ref/settings/#databases

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": os.environ.get("HANDCROP_DATABASE_PATH", str(BASE_DIR / "handcrop.sqlite3")),
    }
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Experiment defaults. Every experiment merges these with an optional
# --config JSON file and then with CLI flags (flags win).
HANDCROP = {
    "SEED": int(os.environ.get("HANDCROP_SEED", "0")),
    "OUTPUT_DIR": os.environ.get("HANDCROP_OUTPUT_DIR", str(BASE_DIR / "runs")),
    "WORKERS": int(os.environ.get("HANDCROP_WORKERS", "1")),
    # 60 degree horizontal field of view, VGA sensor
    "IMAGE_WIDTH": int(os.environ.get("HANDCROP_IMAGE_WIDTH", "640")),
    "IMAGE_HEIGHT": int(os.environ.get("HANDCROP_IMAGE_HEIGHT", "480")),
    "FOV_DEGREES": float(os.environ.get("HANDCROP_FOV_DEGREES", "60")),
    "POPULATION_SIZE": int(os.environ.get("HANDCROP_POPULATION_SIZE", "500")),
    "DEPTH_RANGE_MM": (250.0, 600.0),
    "LOOKALIKE_FRACTION": float(os.environ.get("HANDCROP_LOOKALIKE_FRACTION", "0.5")),
    "SHIFT_MARGIN_PX": 10.0,
    "NEAR_CROP_PX": 20.0,
    "FAR_CROP_PX": 100.0,
    "CENTERED_MAX_PX": 2.0,
    # Soft rasterizer: sigma = factor * (image diagonal)^2, cutoff = k * sqrt(sigma)
    "SIGMA_FACTOR": 1e-4,
    "CUTOFF_FACTOR": 3.0,
    "RENDER_SIZE": 128,
    "FIT_STEPS": 500,
    "FIT_STEP_SIZE": 50.0,
    "GRASP_HIDDEN": (128, 64, 32),
    "GRASP_EPOCHS": 500,
    "GRASP_LEARNING_RATE": 0.1,
}

TOOL_VERSION = "1.0.0"

LOG_DIR = BASE_DIR / "logs"
LOG_DIR.mkdir(exist_ok=True)

# Logging configuration
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "level": "WARNING",
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
        "file": {
            "level": "DEBUG",
            "class": "logging.handlers.RotatingFileHandler",
            "filename": str(LOG_DIR / "handcrop.log"),
            "maxBytes": 1024 * 1024 * 15,  # 15MB
            "backupCount": 10,
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console", "file"],
        "level": "INFO",
    },
    "loggers": {
        "django": {
            "handlers": ["console", "file"],
            "level": "INFO",
            "propagate": False,
        },
        "handcrop": {
            "handlers": ["console", "file"],
            "level": os.environ.get("HANDCROP_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}
