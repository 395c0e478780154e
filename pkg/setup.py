import fenri.const as fenri_const
import os

from setuptools import setup


def readme():
    with open(os.path.join(os.path.dirname(__file__), 'README.rst')) as f:
        return f.read()


setup(
    name=fenri_const.PROJECT_NAME,
    version=fenri_const.PROJECT_VERSION,
    description=fenri_const.PROJECT_DESCRIPTION,
    long_description=readme(),
    packages=['fenri'],
    install_requires=[
        'dipy>=1.7',
        'nibabel>=5.0',
        'numpy>=1.23',
        'pyyaml>=5.1',
        'scipy>=1.9',
        'torch>=2.0'],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    python_requires='>=3.9',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
    ],
    entry_points={
        'console_scripts': ['fenri = fenri.__main__:main']
    },
)
