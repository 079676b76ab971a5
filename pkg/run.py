"""
Script principal para executar o pipeline SLAM.
Este script deve ser executado da raiz do projeto.
"""
import logging
import os
import sys

# Adicionar diretório raiz ao PYTHONPATH
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

from app.main import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logging.warning("\n⚠️ Execução interrompida pelo usuário")
        sys.exit(130)
