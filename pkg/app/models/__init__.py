"""Pacote app.models - modelos probabilísticos de resíduo"""
