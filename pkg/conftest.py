"""Pytest wiring: configure Django the same way manage.py does before tests are collected."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'anchorcast_config.settings')
django.setup()
