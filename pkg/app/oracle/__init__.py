"""Oráculo sintético: cenas, renderização independente e métricas de avaliação."""
