"""Pacote app.frontend - odometria visual densa-indireta por EM generalizado"""
