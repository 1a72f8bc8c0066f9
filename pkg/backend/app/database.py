# app/database.py

from sqlmodel import SQLModel, create_engine, Session
from sqlalchemy.pool import StaticPool
from app.config import settings


# Configuração do engine
def get_engine():
    """
    Cria e retorna o engine do banco de relatórios.
    SQLite: usa StaticPool e check_same_thread=False (a API e o pipeline
    podem gravar de threads diferentes)
    Outros bancos: configuração padrão com pre-ping
    """
    url = settings.database_url

    if url.startswith("sqlite"):
        return create_engine(
            url,
            echo=settings.debug,
            connect_args={"check_same_thread": False},
            poolclass=StaticPool
        )
    return create_engine(url, echo=settings.debug, pool_pre_ping=True)


# Instância global do engine
engine = get_engine()


def create_db_and_tables():
    """
    Cria todas as tabelas no banco de dados.
    Chamado na inicialização da API e antes de gravar uma execução.

    IMPORTANTE: Os models devem ser importados ANTES de chamar esta função
    para que SQLModel.metadata tenha conhecimento deles.
    """
    from app.models import RunRecord, SweepPointRecord, VisibilitySampleRecord  # noqa: F401

    SQLModel.metadata.create_all(engine)


def get_session():
    """
    Dependency que fornece uma sessão do banco de dados.
    Usado como dependência do FastAPI: Depends(get_session)
    """
    with Session(engine) as session:
        yield session


def get_session_context():
    """
    Retorna uma sessão para uso em context manager (CLI / pipeline).

    Uso:
        with get_session_context() as session:
            session.add(run)
            session.commit()
    """
    return Session(engine)
