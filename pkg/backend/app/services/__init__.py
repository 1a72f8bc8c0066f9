# app/services/__init__.py

"""Camada de simulação e processamento: uma responsabilidade por módulo."""
