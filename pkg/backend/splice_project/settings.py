"""Django settings for the splice_project project."""

from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables from .env file
env_path = Path(__file__).resolve().parent.parent.parent / '.env'
load_dotenv(dotenv_path=env_path)

# Project paths
BASE_DIR = Path(__file__).resolve().parent.parent
PROJECT_ROOT = BASE_DIR.parent

# Core settings
SECRET_KEY = os.environ.get('SECRET_KEY', 'django-insecure-splice-local-runs-only')
DEBUG = os.environ.get('DEBUG', 'False').lower() in ('1', 'true', 'yes')

ALLOWED_HOSTS = []


# Apps
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'django.contrib.admin',
    'django.contrib.sessions',
    'django.contrib.messages',
    'splicing',
]

ROOT_URLCONF = 'splice_project.urls'

# Middleware (only used by the admin site)
MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]


# Database (run ledger)
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('SPLICE_DB_PATH', BASE_DIR / 'db.sqlite3'),
    }
}


# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

# Database field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Toolkit settings
SPLICE_DEVICE = os.environ.get('SPLICE_DEVICE', 'auto')
SPLICE_SEED = int(os.environ.get('SPLICE_SEED', '0'))
SPLICE_RUN_NETWORK_TESTS = os.environ.get('SPLICE_RUN_NETWORK_TESTS', '').lower() in ('1', 'true', 'yes')

# Extractor defaults; these become VIT_* config values for every run
SPLICE_VIT = {
    'VIT_WEIGHTS_SOURCE': os.environ.get('SPLICE_VIT_WEIGHTS', 'facebook/dino-vitb8'),
    'VIT_PATCH_SIZE': os.environ.get('SPLICE_VIT_PATCH_SIZE', ''),
    'VIT_NUM_LAYERS': os.environ.get('SPLICE_VIT_NUM_LAYERS', ''),
    'VIT_TOKEN_DIM': os.environ.get('SPLICE_VIT_TOKEN_DIM', ''),
    'VIT_NUM_HEADS': os.environ.get('SPLICE_VIT_NUM_HEADS', ''),
    'VIT_MLP_DIM': os.environ.get('SPLICE_VIT_MLP_DIM', ''),
    'VIT_IMAGE_SIZE': os.environ.get('SPLICE_VIT_IMAGE_SIZE', ''),
}

# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'INFO',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': os.environ.get('SPLICE_LOG_LEVEL', 'INFO'),
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}
