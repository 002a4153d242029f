"""
Django settings for anchorcast_config project.

The project has no web surface: Django hosts the management commands
(`project`, `train`, `generate`, `eval`) and the test runner.
"""

from pathlib import Path
from dotenv import load_dotenv
import os
# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(os.path.join(BASE_DIR, '.env'))
SECRET_KEY = os.environ.get('SECRET_KEY', 'anchorcast-local-only')

DEBUG = os.environ.get('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'studio_app',
]

# No database: every test is a SimpleTestCase and nothing is persisted through the ORM.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Anchorcast paths and switches

DATA_DIR = BASE_DIR / 'data'

# The only environment override a run honours.
ANCHORCAST_OUTPUT_DIR = Path(os.environ.get('ANCHORCAST_OUTPUT_DIR', BASE_DIR / 'runs'))

# Minute-scale training runs and seed sweeps in the test-suite.
RUN_SLOW_TESTS = os.environ.get('ANCHORCAST_SLOW_TESTS', 'False') == 'True'
